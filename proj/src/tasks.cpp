#include "wino/tasks.hpp"

#include "wino/model.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_set>

namespace wino {

namespace {

constexpr char SPECIAL_GLYPHS[4] = { '_', '.', '$', '^' };

long long pow10(int n) {
    long long p = 1;
    for (int i = 0; i < n; ++i) {
        p *= 10;
    }
    return p;
}

int decimal_width(long long v) { return static_cast<int>(std::to_string(v).size()); }

char random_letter(Rng & rng) { return static_cast<char>('a' + rng.uniform_index(10)); }

}  // namespace

Vocab::Vocab() : symbols_(std::string(4, '\0') + "0123456789+-*=%,|>abcdefghij") {}

const Vocab & Vocab::get() {
    static const Vocab v;
    return v;
}

bool Vocab::contains(char c) const { return c != '\0' && symbols_.find(c, 4) != std::string::npos; }

int Vocab::id(char c) const {
    const auto pos = c == '\0' ? std::string::npos : symbols_.find(c, 4);
    if (pos == std::string::npos) {
        throw std::invalid_argument(std::string("character not in vocabulary: '") + c + "'");
    }
    return static_cast<int>(pos);
}

char Vocab::symbol(int id) const {
    if (id <= BOA_ID || id >= size()) {
        throw std::invalid_argument("token id " + std::to_string(id) + " has no text form");
    }
    return symbols_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(std::string_view text) const {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (char c : text) {
        ids.push_back(id(c));
    }
    return ids;
}

std::string Vocab::decode(std::span<const int> ids) const {
    std::string s;
    s.reserve(ids.size());
    for (int i : ids) {
        s.push_back(symbol(i));
    }
    return s;
}

std::string Vocab::render(std::span<const int> ids) const {
    std::string s;
    for (int i : ids) {
        if (i >= 0 && i <= BOA_ID) {
            s.push_back(SPECIAL_GLYPHS[i]);
        } else {
            s.push_back(symbol(i));
        }
    }
    return s;
}

std::vector<int> Vocab::parse_rendered(std::string_view text) const {
    std::vector<int> ids;
    for (char c : text) {
        const auto * g = std::find(std::begin(SPECIAL_GLYPHS), std::end(SPECIAL_GLYPHS), c);
        ids.push_back(g != std::end(SPECIAL_GLYPHS) ? static_cast<int>(g - std::begin(SPECIAL_GLYPHS)) : id(c));
    }
    return ids;
}

std::string task_name(TaskKind k) {
    switch (k) {
        case TaskKind::add: return "add";
        case TaskKind::reverse: return "reverse";
        case TaskKind::sort: return "sort";
        case TaskKind::chain_mod: return "chain-mod";
    }
    return "?";
}

TaskKind parse_task_kind(const std::string & name) {
    if (name == "add") return TaskKind::add;
    if (name == "reverse") return TaskKind::reverse;
    if (name == "sort") return TaskKind::sort;
    if (name == "chain-mod") return TaskKind::chain_mod;
    throw std::invalid_argument("unknown task '" + name + "' (expected add | reverse | sort | chain-mod)");
}

void TaskSpec::validate() const {
    switch (kind) {
        case TaskKind::add:
            if (digits < 1 || digits > 9) throw std::invalid_argument("task.digits must be in [1, 9]");
            break;
        case TaskKind::reverse:
        case TaskKind::sort:
            if (list_length < 1 || list_length > 64) throw std::invalid_argument("task.list_length must be in [1, 64]");
            break;
        case TaskKind::chain_mod:
            if (modulus < 2 || modulus > 99) throw std::invalid_argument("task.modulus must be in [2, 99]");
            if (chain_length < 1 || chain_length > 16) throw std::invalid_argument("task.chain_length must be in [1, 16]");
            break;
    }
    if (generation_length != 0 && generation_length < max_answer_length() + 2) {
        throw std::invalid_argument("task.generation_length too short for BOA + answer + EOS");
    }
}

int TaskSpec::max_answer_length() const {
    switch (kind) {
        case TaskKind::add: return digits + 1;
        case TaskKind::reverse:
        case TaskKind::sort: return list_length;
        case TaskKind::chain_mod: return decimal_width(modulus - 1);
    }
    return 0;
}

int TaskSpec::recommended_generation_length() const {
    // BOA + answer + EOS, rounded up to a multiple of 4 so two equal blocks fit
    const int need = max_answer_length() + 2;
    return (need + 3) / 4 * 4;
}

void to_json(nlohmann::json & j, const TaskSpec & s) {
    j = nlohmann::json{ { "name", task_name(s.kind) },         { "digits", s.digits },
                        { "list_length", s.list_length },      { "modulus", s.modulus },
                        { "chain_length", s.chain_length },    { "generation_length", s.generation_length } };
}

void from_json(const nlohmann::json & j, TaskSpec & s) {
    TaskSpec d;
    s.kind              = parse_task_kind(j.value("name", task_name(d.kind)));
    s.digits            = j.value("digits", d.digits);
    s.list_length       = j.value("list_length", d.list_length);
    s.modulus           = j.value("modulus", d.modulus);
    s.chain_length      = j.value("chain_length", d.chain_length);
    s.generation_length = j.value("generation_length", d.generation_length);
}

TaskSample make_sample(const std::string & task_id, const std::string & prompt, const std::string & answer) {
    const Vocab & v = Vocab::get();
    TaskSample    s;
    s.task_id       = task_id;
    s.prompt_text   = prompt;
    s.answer_text   = answer;
    s.prompt_tokens = v.encode(prompt);
    s.answer_tokens = v.encode(answer);
    return s;
}

TaskSample make_add_sample(long long a, long long b) {
    return make_sample("add", std::to_string(a) + "+" + std::to_string(b) + "=", std::to_string(a + b));
}

TaskSample generate_sample(const TaskSpec & spec, Rng & rng) {
    spec.validate();
    switch (spec.kind) {
        case TaskKind::add: {
            const long long lo = spec.digits == 1 ? 0 : pow10(spec.digits - 1);
            const long long hi = pow10(spec.digits) - 1;
            const long long a  = rng.uniform_int(lo, hi);
            const long long b  = rng.uniform_int(lo, hi);
            return make_add_sample(a, b);
        }
        case TaskKind::reverse: {
            std::string s;
            for (int i = 0; i < spec.list_length; ++i) {
                s.push_back(random_letter(rng));
            }
            return make_sample("reverse", s + "|", std::string(s.rbegin(), s.rend()));
        }
        case TaskKind::sort: {
            std::string s;
            for (int i = 0; i < spec.list_length; ++i) {
                s.push_back(random_letter(rng));
            }
            std::string sorted = s;
            std::sort(sorted.begin(), sorted.end());
            return make_sample("sort", s + ">", sorted);
        }
        case TaskKind::chain_mod: {
            // left-to-right evaluation, reduced modulo m after every operation
            const long long m     = spec.modulus;
            long long       acc   = rng.uniform_int(0, 9);
            std::string     p     = std::to_string(acc);
            static const char ops[3] = { '+', '-', '*' };
            acc %= m;
            for (int i = 0; i < spec.chain_length; ++i) {
                const char      op = ops[rng.uniform_index(3)];
                const long long x  = rng.uniform_int(0, 9);
                p.push_back(op);
                p += std::to_string(x);
                if (op == '+') acc = (acc + x) % m;
                if (op == '-') acc = ((acc - x) % m + m) % m;
                if (op == '*') acc = (acc * x) % m;
            }
            p += "%" + std::to_string(m) + "=";
            return make_sample("chain-mod", p, std::to_string(acc));
        }
    }
    throw std::logic_error("unreachable task kind");
}

std::vector<int> frame_response(std::span<const int> answer_tokens, int length) {
    if (static_cast<int>(answer_tokens.size()) + 2 > length) {
        throw std::invalid_argument("answer of length " + std::to_string(answer_tokens.size()) +
                                    " does not fit a response of length " + std::to_string(length));
    }
    std::vector<int> r;
    r.reserve(static_cast<std::size_t>(length));
    r.push_back(BOA_ID);
    r.insert(r.end(), answer_tokens.begin(), answer_tokens.end());
    r.push_back(EOS_ID);
    r.resize(static_cast<std::size_t>(length), PAD_ID);
    return r;
}

bool evaluate(const TaskSpec & spec, const TaskSample & sample, std::span<const int> generated) {
    (void) spec;
    if (std::find(generated.begin(), generated.end(), MASK_ID) != generated.end()) {
        return false;
    }
    const auto boa = std::find(generated.begin(), generated.end(), BOA_ID);
    if (boa == generated.end()) {
        return false;
    }
    const auto eos = std::find(boa + 1, generated.end(), EOS_ID);
    if (eos == generated.end()) {
        return false;
    }
    std::string text;
    for (auto it = boa + 1; it != eos; ++it) {
        if (*it == PAD_ID) {
            continue;
        }
        if (*it <= BOA_ID) {
            return false;
        }
        text.push_back(Vocab::get().symbol(*it));
    }
    return text == sample.answer_text;
}

std::vector<TaskSample> generate_samples(const TaskSpec & spec, std::size_t n, Rng & rng,
                                         const std::vector<TaskSample> * exclude) {
    std::unordered_set<std::string> seen;
    if (exclude) {
        for (const auto & s : *exclude) {
            seen.insert(s.prompt_text);
        }
    }
    std::vector<TaskSample> out;
    out.reserve(n);
    // Duplicate prompts are rejected until the attempt budget runs out, which
    // only happens for tasks with a tiny sample space.
    std::size_t budget = 20 * n + 100;
    while (out.size() < n) {
        TaskSample s = generate_sample(spec, rng);
        if (budget > 0 && !seen.insert(s.prompt_text).second) {
            --budget;
            continue;
        }
        out.push_back(std::move(s));
    }
    return out;
}

void write_dataset(const std::filesystem::path & path, const std::vector<TaskSample> & samples) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    for (const auto & s : samples) {
        f << nlohmann::json{ { "task", s.task_id }, { "prompt", s.prompt_text }, { "answer", s.answer_text } }.dump()
          << '\n';
    }
}

std::vector<TaskSample> load_dataset(const std::filesystem::path & path) {
    std::ifstream f(path);
    if (!f) {
        throw std::runtime_error("cannot open " + path.string());
    }
    std::vector<TaskSample> out;
    std::string             line;
    std::size_t             lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        try {
            const auto j = nlohmann::json::parse(line);
            out.push_back(make_sample(j.at("task").get<std::string>(), j.at("prompt").get<std::string>(),
                                      j.at("answer").get<std::string>()));
        } catch (const std::exception & e) {
            throw DatasetError(lineno, e.what());
        }
    }
    return out;
}

std::vector<TaskSample> build_dataset(const TaskSpec & spec, std::size_t n, Rng & rng, const std::filesystem::path & path) {
    auto samples = generate_samples(spec, n, rng);
    write_dataset(path, samples);
    return samples;
}

}  // namespace wino
