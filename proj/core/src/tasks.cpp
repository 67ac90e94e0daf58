#include "covrl/tasks.hpp"

#include <algorithm>
#include <ostream>
#include <istream>
#include <sstream>
#include <stdexcept>

#include "covrl/rng.hpp"

namespace covrl {

namespace {

void check_vocab(const Vocabulary& v) {
  if (v.n_content < 1) throw std::invalid_argument("vocabulary: need content tokens");
  const int ids[5] = {v.think_open, v.think_close, v.answer_open, v.answer_close, v.end};
  for (int i = 0; i < 5; ++i) {
    if (ids[i] < v.n_content || ids[i] >= v.size())
      throw std::invalid_argument("vocabulary: special id outside special range");
    for (int j = i + 1; j < 5; ++j)
      if (ids[i] == ids[j]) throw std::invalid_argument("vocabulary: duplicate special id");
  }
}

int op_arity_value(const TaskSpec& spec, char op, int acc, int operand) {
  switch (op) {
    case '+': return (acc + operand) % spec.modulus;
    case '*': return (acc * operand) % spec.modulus;
    case '-': return ((acc - operand) % spec.modulus + spec.modulus) % spec.modulus;
    default: throw std::invalid_argument(std::string("mod_chain: unknown operator '") + op + "'");
  }
}

int op_token(const TaskSpec& spec, char op) {
  switch (op) {
    case '+': return spec.modulus;
    case '*': return spec.modulus + 1;
    case '-': return spec.modulus + 2;
    default: throw std::invalid_argument(std::string("mod_chain: unknown operator '") + op + "'");
  }
}

char op_char(const TaskSpec& spec, int token) {
  if (token == spec.modulus) return '+';
  if (token == spec.modulus + 1) return '*';
  if (token == spec.modulus + 2) return '-';
  throw std::invalid_argument("mod_chain: token is not an operator");
}

void check_spec(const TaskSpec& spec) {
  if (spec.family != "mod_chain")
    throw std::invalid_argument("task family not registered: " + spec.family);
  if (spec.modulus < 2 || spec.modulus > 36)
    throw std::invalid_argument("mod_chain: modulus must be in [2, 36]");
  if (spec.k_min < 1 || spec.k_max < spec.k_min)
    throw std::invalid_argument("mod_chain: need 1 <= k_min <= k_max");
  if (spec.ops.empty()) throw std::invalid_argument("mod_chain: empty operator set");
  for (char c : spec.ops)
    if (c != '+' && c != '*' && c != '-')
      throw std::invalid_argument(std::string("mod_chain: unknown operator '") + c + "'");
}

}  // namespace

Vocabulary make_vocabulary(int n_content) {
  Vocabulary v;
  v.n_content = n_content;
  v.think_open = n_content;
  v.think_close = n_content + 1;
  v.answer_open = n_content + 2;
  v.answer_close = n_content + 3;
  v.end = n_content + 4;
  check_vocab(v);
  return v;
}

Vocabulary make_task_vocabulary(const TaskSpec& spec) {
  check_spec(spec);
  return make_vocabulary(spec.modulus + 3);
}

TaskInstance generate_instance(const TaskSpec& spec, Rng& rng) {
  check_spec(spec);
  const int k = spec.k_min + (spec.k_max > spec.k_min ? rng.next_int(spec.k_max - spec.k_min + 1) : 0);
  TaskInstance inst;
  inst.difficulty = k;
  int acc = rng.next_int(spec.modulus);
  inst.question_tokens.push_back(acc);
  for (int step = 0; step < k; ++step) {
    const char op = spec.ops[rng.next_int(static_cast<int>(spec.ops.size()))];
    const int operand = rng.next_int(spec.modulus);
    inst.question_tokens.push_back(op_token(spec, op));
    inst.question_tokens.push_back(operand);
    acc = op_arity_value(spec, op, acc, operand);
  }
  inst.answer_tokens.push_back(acc);
  std::ostringstream id;
  id << "mod" << spec.modulus << "-k" << k;
  for (int t : inst.question_tokens) id << "-" << t;
  inst.task_id = id.str();
  return inst;
}

std::vector<int> ground_truth_trace(const TaskSpec& spec, const TaskInstance& instance) {
  check_spec(spec);
  const auto& q = instance.question_tokens;
  if (q.empty() || q.size() % 2 == 0)
    throw std::invalid_argument("mod_chain: malformed question");
  int acc = q[0];
  if (acc < 0 || acc >= spec.modulus) throw std::invalid_argument("mod_chain: bad initial value");
  std::vector<int> trace;
  for (size_t i = 1; i + 1 < q.size(); i += 2) {
    const char op = op_char(spec, q[i]);
    const int operand = q[i + 1];
    if (operand < 0 || operand >= spec.modulus)
      throw std::invalid_argument("mod_chain: bad operand");
    acc = op_arity_value(spec, op, acc, operand);
    trace.push_back(acc);
  }
  return trace;
}

std::vector<int> render_context(const Vocabulary& vocab, const TaskInstance& instance,
                                LayoutMode mode) {
  check_vocab(vocab);
  for (int t : instance.question_tokens)
    if (!vocab.is_content(t)) throw std::invalid_argument("render_context: special in question");
  for (int t : instance.answer_tokens)
    if (!vocab.is_content(t)) throw std::invalid_argument("render_context: special in answer");
  if (instance.answer_tokens.empty())
    throw std::invalid_argument("render_context: empty answer");
  std::vector<int> ctx = instance.question_tokens;
  if (mode == LayoutMode::prior) {
    ctx.push_back(vocab.think_open);
  } else {
    ctx.push_back(vocab.answer_open);
    ctx.insert(ctx.end(), instance.answer_tokens.begin(), instance.answer_tokens.end());
    ctx.push_back(vocab.answer_close);
    ctx.push_back(vocab.think_open);
  }
  return ctx;
}

ParsedResponse validate_format(const Vocabulary& vocab, std::span<const int> full_sequence,
                               LayoutMode mode) {
  check_vocab(vocab);
  ParsedResponse out;
  const size_t n = full_sequence.size();
  size_t to = n, tc = n, ao = n, ac = n;
  bool dup = false;
  for (size_t i = 0; i < n; ++i) {
    const int t = full_sequence[i];
    auto mark = [&](size_t& pos) {
      if (pos != n) dup = true;
      pos = i;
    };
    if (t == vocab.think_open) mark(to);
    else if (t == vocab.think_close) mark(tc);
    else if (t == vocab.answer_open) mark(ao);
    else if (t == vocab.answer_close) mark(ac);
  }
  if (dup || to == n || tc == n || ao == n || ac == n) return out;
  const bool ordered = (mode == LayoutMode::prior) ? (to < tc && tc < ao && ao < ac)
                                                   : (ao < ac && ac < to && to < tc);
  if (!ordered) return out;
  const size_t first = std::min(to, ao);
  const size_t last = std::max(ac, tc);
  // Prefix = question span: content only. Suffix: at most one END.
  for (size_t i = 0; i < first; ++i)
    if (!vocab.is_content(full_sequence[i])) return out;
  const size_t suffix = n - last - 1;
  if (suffix > 1) return out;
  if (suffix == 1 && full_sequence[n - 1] != vocab.end) return out;
  // Spans must be content-only; the gap between the two delimiter pairs
  // must be empty (prior: TC then AO adjacent; posterior: AC then TO).
  auto content_only = [&](size_t lo, size_t hi) {
    for (size_t i = lo; i < hi; ++i)
      if (!vocab.is_content(full_sequence[i])) return false;
    return true;
  };
  const size_t gap_lo = (mode == LayoutMode::prior) ? tc + 1 : ac + 1;
  const size_t gap_hi = (mode == LayoutMode::prior) ? ao : to;
  if (gap_lo != gap_hi) return out;
  if (!content_only(to + 1, tc) || !content_only(ao + 1, ac)) return out;
  out.think_tokens.assign(full_sequence.begin() + to + 1, full_sequence.begin() + tc);
  out.answer_tokens.assign(full_sequence.begin() + ao + 1, full_sequence.begin() + ac);
  out.valid_format = true;
  return out;
}

std::vector<int> canonicalize_tokens(const Vocabulary& vocab, std::span<const int> raw) {
  check_vocab(vocab);
  if (vocab.spellings.empty()) return std::vector<int>(raw.begin(), raw.end());
  // Longest spelling first at each position.
  std::vector<std::pair<std::vector<int>, int>> table;
  for (const auto& [id, glyphs] : vocab.spellings) {
    if (glyphs.empty()) throw std::invalid_argument("canonicalize: empty spelling");
    for (int g : glyphs)
      if (!vocab.is_content(g))
        throw std::invalid_argument("canonicalize: spelling must use content tokens");
    table.emplace_back(glyphs, id);
  }
  std::sort(table.begin(), table.end(), [](const auto& a, const auto& b) {
    return a.first.size() > b.first.size();
  });
  std::vector<int> out;
  out.reserve(raw.size());
  size_t i = 0;
  while (i < raw.size()) {
    bool matched = false;
    for (const auto& [glyphs, id] : table) {
      if (glyphs.size() <= raw.size() - i &&
          std::equal(glyphs.begin(), glyphs.end(), raw.begin() + i)) {
        out.push_back(id);
        i += glyphs.size();
        matched = true;
        break;
      }
    }
    if (!matched) out.push_back(raw[i++]);
  }
  return out;
}

void export_instances(std::ostream& out, std::span<const TaskInstance> instances) {
  for (const auto& inst : instances) {
    out << inst.task_id << '\t';
    for (size_t i = 0; i < inst.question_tokens.size(); ++i)
      out << (i ? " " : "") << inst.question_tokens[i];
    out << '\t';
    for (size_t i = 0; i < inst.answer_tokens.size(); ++i)
      out << (i ? " " : "") << inst.answer_tokens[i];
    out << '\t' << inst.difficulty << '\n';
  }
}

std::vector<TaskInstance> import_instances(std::istream& in) {
  std::vector<TaskInstance> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    TaskInstance inst;
    std::string qs, as, ds;
    if (!std::getline(ss, inst.task_id, '\t') || !std::getline(ss, qs, '\t') ||
        !std::getline(ss, as, '\t') || !std::getline(ss, ds))
      throw std::runtime_error("import_instances: malformed line " + std::to_string(lineno));
    std::istringstream qss(qs), ass(as);
    int t;
    while (qss >> t) inst.question_tokens.push_back(t);
    while (ass >> t) inst.answer_tokens.push_back(t);
    inst.difficulty = std::stoi(ds);
    if (inst.answer_tokens.empty())
      throw std::runtime_error("import_instances: empty answer at line " + std::to_string(lineno));
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace covrl
