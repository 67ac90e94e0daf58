#pragma once

#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace covrl {

class Rng;

// Token-id space shared by tasks and models. Content tokens occupy
// [0, n_content); the five special roles occupy the next five ids. Models
// never see this structure, only ids in [0, size()).
struct Vocabulary {
  int n_content = 0;
  int think_open = 0;
  int think_close = 0;
  int answer_open = 0;
  int answer_close = 0;
  int end = 0;
  // Optional multi-token content spellings of special tokens, used by
  // canonicalize_tokens to undo merged encodings. Default vocabularies have
  // none; tests inject them.
  std::map<int, std::vector<int>> spellings;

  int size() const { return n_content + 5; }
  bool is_content(int t) const { return t >= 0 && t < n_content; }
  bool is_special(int t) const { return t >= n_content && t < size(); }
};

Vocabulary make_vocabulary(int n_content);

// Modular-arithmetic chain tasks: the question lists k operations mod m,
// the canonical trace is the running intermediate values, the answer is the
// final residue.
struct TaskSpec {
  std::string family = "mod_chain";
  int k_min = 1;
  int k_max = 1;
  int modulus = 10;
  std::string ops = "+*";  // allowed operators, subset of "+*-"
};

// Digits map to ids [0, m); operators '+', '*', '-' map to m, m+1, m+2.
Vocabulary make_task_vocabulary(const TaskSpec& spec);

struct TaskInstance {
  std::string task_id;
  std::vector<int> question_tokens;
  std::vector<int> answer_tokens;
  int difficulty = 0;
};

TaskInstance generate_instance(const TaskSpec& spec, Rng& rng);

// Recomputes the canonical intermediate-value trace from the question.
std::vector<int> ground_truth_trace(const TaskSpec& spec, const TaskInstance& instance);

enum class LayoutMode { prior, posterior };

// prior:     [question..., THINK_OPEN]            (model emits trace, close, answer)
// posterior: [question..., ANSWER_OPEN, answer..., ANSWER_CLOSE, THINK_OPEN]
std::vector<int> render_context(const Vocabulary& vocab, const TaskInstance& instance,
                                LayoutMode mode);

struct ParsedResponse {
  std::vector<int> think_tokens;
  std::vector<int> answer_tokens;
  bool valid_format = false;
};

// Delimiter-structure check over a full templated sequence (question span
// may be present or absent). Valid iff the four delimiters appear exactly
// once, in mode order, with content-only spans, and at most a trailing END.
ParsedResponse validate_format(const Vocabulary& vocab, std::span<const int> full_sequence,
                               LayoutMode mode);

// Greedy longest-match replacement of spelled-out special tokens by their
// atomic ids. Idempotent; identity when the vocabulary has no spellings.
std::vector<int> canonicalize_tokens(const Vocabulary& vocab, std::span<const int> raw);

// Line-delimited instance records (task_id, question, answer, difficulty)
// for reproducible eval sets.
void export_instances(std::ostream& out, std::span<const TaskInstance> instances);
std::vector<TaskInstance> import_instances(std::istream& in);

}  // namespace covrl
