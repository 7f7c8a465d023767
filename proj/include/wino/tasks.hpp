#pragma once

#include "wino/numerics.hpp"

#include <json.hpp>

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace wino {

// Character-level vocabulary. Ids 0-3 are MASK, PAD, EOS, BOA; the rest are
// the digits, operators, separators and the letters a-j.
class Vocab {
  public:
    static const Vocab & get();

    int  size() const { return static_cast<int>(symbols_.size()); }
    int  id(char c) const;  // throws std::invalid_argument for characters outside the vocabulary
    char symbol(int id) const;
    bool contains(char c) const;

    std::vector<int> encode(std::string_view text) const;
    // Throws for special ids, which have no text form.
    std::string      decode(std::span<const int> ids) const;

    // Printable form that also covers specials: MASK '_', PAD '.', EOS '$', BOA '^'.
    std::string      render(std::span<const int> ids) const;
    std::vector<int> parse_rendered(std::string_view text) const;

  private:
    Vocab();
    std::string symbols_;
};

enum class TaskKind { add, reverse, sort, chain_mod };

std::string task_name(TaskKind k);
TaskKind    parse_task_kind(const std::string & name);

struct TaskSpec {
    TaskKind kind              = TaskKind::add;
    int      digits            = 3;  // add: digits per operand
    int      list_length       = 5;  // reverse / sort
    int      modulus           = 7;  // chain-mod
    int      chain_length      = 3;  // chain-mod: number of operations
    int      generation_length = 0;  // 0 = recommended_generation_length()

    void validate() const;
    int  max_answer_length() const;
    int  recommended_generation_length() const;
    int  effective_generation_length() const {
        return generation_length > 0 ? generation_length : recommended_generation_length();
    }
};

void to_json(nlohmann::json & j, const TaskSpec & s);
void from_json(const nlohmann::json & j, TaskSpec & s);

struct TaskSample {
    std::string      task_id;
    std::string      prompt_text;
    std::string      answer_text;
    std::vector<int> prompt_tokens;
    std::vector<int> answer_tokens;
};

TaskSample make_sample(const std::string & task_id, const std::string & prompt, const std::string & answer);
TaskSample make_add_sample(long long a, long long b);
TaskSample generate_sample(const TaskSpec & spec, Rng & rng);

// [BOA, answer..., EOS, PAD...] padded to length. Throws if the answer does not fit.
std::vector<int> frame_response(std::span<const int> answer_tokens, int length);

// Exact-match check of a generated response region against the sample's answer.
bool evaluate(const TaskSpec & spec, const TaskSample & sample, std::span<const int> generated);

// Samples with distinct prompts where the task admits enough of them.
std::vector<TaskSample> generate_samples(const TaskSpec & spec, std::size_t n, Rng & rng,
                                         const std::vector<TaskSample> * exclude = nullptr);

class DatasetError : public std::runtime_error {
  public:
    DatasetError(std::size_t line, const std::string & what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const { return line_; }

  private:
    std::size_t line_;
};

void                    write_dataset(const std::filesystem::path & path, const std::vector<TaskSample> & samples);
std::vector<TaskSample> load_dataset(const std::filesystem::path & path);
std::vector<TaskSample> build_dataset(const TaskSpec & spec, std::size_t n, Rng & rng, const std::filesystem::path & path);

}  // namespace wino
