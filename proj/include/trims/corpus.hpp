#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "trims/bucket_table.hpp"
#include "trims/error.hpp"
#include "trims/rng.hpp"
#include "trims/vocab.hpp"

namespace trims {

enum class TaskKind { addition, copy_reverse, sorted_digits };

inline std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::addition: return "addition";
    case TaskKind::copy_reverse: return "copy_reverse";
    case TaskKind::sorted_digits: return "sorted_digits";
  }
  return "?";
}

inline TaskKind parse_task_kind(const std::string& s) {
  if (s == "addition") return TaskKind::addition;
  if (s == "copy_reverse") return TaskKind::copy_reverse;
  if (s == "sorted_digits") return TaskKind::sorted_digits;
  throw UsageError("unknown task kind '" + s + "' (expected addition, copy_reverse or sorted_digits)");
}

// Half-open index range into the completion.
struct AnswerSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  friend bool operator==(const AnswerSpan&, const AnswerSpan&) = default;
};

struct Example {
  std::vector<int> prompt;
  std::vector<int> completion;
  AnswerSpan answer_span;
  TaskKind task = TaskKind::addition;

  std::size_t length() const { return prompt.size() + completion.size(); }

  void validate(std::size_t max_seq_len) const {
    if (completion.empty()) throw DataError("example has an empty completion");
    if (answer_span.begin > answer_span.end || answer_span.end > completion.size()) {
      throw DataError("answer span [" + std::to_string(answer_span.begin) + ", " + std::to_string(answer_span.end) +
                      ") outside completion of length " + std::to_string(completion.size()));
    }
    if (length() > max_seq_len) {
      throw DataError("example length " + std::to_string(length()) + " exceeds max_seq_len " +
                      std::to_string(max_seq_len));
    }
  }

  friend bool operator==(const Example&, const Example&) = default;
};

// Example with optional per-completion-token difficulty scores and bucket ids.
struct ScoredExample {
  Example example;
  std::optional<std::vector<double>> scores;
  std::optional<std::vector<int>> bucket_ids;

  void validate(std::size_t max_seq_len) const {
    example.validate(max_seq_len);
    const std::size_t n = example.completion.size();
    if (scores && scores->size() != n) {
      throw DataError("scores length " + std::to_string(scores->size()) + " differs from completion length " +
                      std::to_string(n));
    }
    if (bucket_ids && bucket_ids->size() != n) {
      throw DataError("bucket_ids length " + std::to_string(bucket_ids->size()) +
                      " differs from completion length " + std::to_string(n));
    }
  }

  friend bool operator==(const ScoredExample&, const ScoredExample&) = default;
};

struct Dataset {
  std::optional<BucketTable> table;
  std::vector<ScoredExample> examples;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Longest prompt + completion any generator emits; fits the default max_seq_len.
inline constexpr std::size_t kMaxExampleLength = 128;

// ---------------------------------------------------------------------------
// Task constructors

// Column-wise worked sum, least significant digit first, e.g. 347+85:
//   "7+5+0=12;4+8+1=13;3+0+1=04;answer=432"
// Each column reads "a+b+carry_in=<carry_out><digit>;".
inline Example make_addition(std::uint64_t a, std::uint64_t b) {
  const std::string sa = std::to_string(a), sb = std::to_string(b);
  const std::size_t cols = std::max(sa.size(), sb.size());
  auto digit = [](const std::string& s, std::size_t i) { return i < s.size() ? s[s.size() - 1 - i] - '0' : 0; };
  std::string completion;
  int carry = 0;
  for (std::size_t i = 0; i < cols; ++i) {
    const int da = digit(sa, i), db = digit(sb, i);
    const int total = da + db + carry;
    completion += std::to_string(da) + "+" + std::to_string(db) + "+" + std::to_string(carry) + "=" +
                  std::to_string(total / 10) + std::to_string(total % 10) + ";";
    carry = total / 10;
  }
  completion += "answer=";
  const std::size_t begin = completion.size();
  completion += std::to_string(a + b);
  Example ex;
  ex.prompt = tokenize(sa + "+" + sb + "=");
  ex.completion = tokenize(completion);
  ex.answer_span = {begin, completion.size()};
  ex.task = TaskKind::addition;
  return ex;
}

inline Example make_copy_reverse(std::string_view text) {
  Example ex;
  ex.prompt = tokenize(std::string(text) + "=");
  ex.completion = tokenize(std::string(text.rbegin(), text.rend()));
  ex.answer_span = {0, ex.completion.size()};
  ex.task = TaskKind::copy_reverse;
  return ex;
}

// `digits` is a space-separated digit list such as "3 1 2".
inline Example make_sorted_digits(std::string_view digits) {
  std::vector<char> ds;
  for (char c : digits) {
    if (c >= '0' && c <= '9') ds.push_back(c);
    else if (c != ' ') throw DataError("sorted_digits: unexpected character '" + std::string(1, c) + "'");
  }
  std::sort(ds.begin(), ds.end());
  std::string sorted;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (i) sorted.push_back(' ');
    sorted.push_back(ds[i]);
  }
  Example ex;
  ex.prompt = tokenize(std::string(digits) + "=");
  ex.completion = tokenize(sorted);
  ex.answer_span = {0, ex.completion.size()};
  ex.task = TaskKind::sorted_digits;
  return ex;
}

// Synthetic corpus; identical (task, count, seed) gives identical examples.
// Completion lengths: addition 27-38, copy_reverse 24-40, sorted_digits 25-59.
inline std::vector<Example> gen_corpus(TaskKind task, std::size_t count, std::uint64_t seed) {
  if (count == 0) throw UsageError("gen_corpus: count must be positive");
  std::vector<Example> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(hash_key({seed, static_cast<std::uint64_t>(task), i}));
    switch (task) {
      case TaskKind::addition: {
        auto operand = [&rng] {
          const std::uint64_t digits = 2 + rng.below(2);
          const std::uint64_t lo = digits == 2 ? 10 : 100;
          return lo + rng.below(lo * 9);
        };
        const std::uint64_t a = operand();
        const std::uint64_t b = operand();
        out.push_back(make_addition(a, b));
        break;
      }
      case TaskKind::copy_reverse: {
        const std::size_t len = 24 + rng.below(17);
        std::string s;
        for (std::size_t j = 0; j < len; ++j) s.push_back(static_cast<char>('a' + rng.below(8)));
        out.push_back(make_copy_reverse(s));
        break;
      }
      case TaskKind::sorted_digits: {
        const std::size_t len = 13 + rng.below(18);
        std::string s;
        for (std::size_t j = 0; j < len; ++j) {
          if (j) s.push_back(' ');
          s.push_back(static_cast<char>('0' + rng.below(10)));
        }
        out.push_back(make_sorted_digits(s));
        break;
      }
    }
  }
  return out;
}

// Generated response tokens, truncated at the first END symbol.
inline std::vector<int> strip_response(const std::vector<int>& generated) {
  auto end = std::find(generated.begin(), generated.end(), kEndId);
  return {generated.begin(), end};
}

// Addition: the digits following the last "answer=" marker must equal the
// expected answer. Other tasks: exact match of the whole completion.
inline bool check_answer(const Example& ex, const std::vector<int>& generated) {
  const std::vector<int> body = strip_response(generated);
  for (int id : body) {
    if (id < kFirstCharId || id >= kVocabSize) return false;
  }
  if (ex.task != TaskKind::addition) return body == ex.completion;

  const std::string text = detokenize(body);
  const std::string expected = detokenize(std::vector<int>(ex.completion.begin() + static_cast<std::ptrdiff_t>(ex.answer_span.begin),
                                                           ex.completion.begin() + static_cast<std::ptrdiff_t>(ex.answer_span.end)));
  const std::string marker = "answer=";
  const auto pos = text.rfind(marker);
  if (pos == std::string::npos) return false;
  std::size_t i = pos + marker.size();
  std::size_t j = i;
  while (j < text.size() && text[j] >= '0' && text[j] <= '9') ++j;
  return text.substr(i, j - i) == expected;
}

// ---------------------------------------------------------------------------
// Dataset file: one JSON object per line. An optional first line
// {"bucket_table": {...}} carries the bucketing header.

inline nlohmann::json to_json(const ScoredExample& s) {
  nlohmann::json j = {{"prompt", detokenize(s.example.prompt)},
                      {"completion", detokenize(s.example.completion)},
                      {"answer_span", {s.example.answer_span.begin, s.example.answer_span.end}},
                      {"task_kind", to_string(s.example.task)}};
  if (s.scores) j["scores"] = *s.scores;
  if (s.bucket_ids) j["bucket_ids"] = *s.bucket_ids;
  return j;
}

inline ScoredExample scored_example_from_json(const nlohmann::json& j) {
  ScoredExample s;
  s.example.prompt = tokenize(j.at("prompt").get<std::string>());
  s.example.completion = tokenize(j.at("completion").get<std::string>());
  const auto span = j.at("answer_span").get<std::vector<std::size_t>>();
  if (span.size() != 2) throw DataError("answer_span must have two entries");
  s.example.answer_span = {span[0], span[1]};
  try {
    s.example.task = parse_task_kind(j.at("task_kind").get<std::string>());
  } catch (const UsageError& e) {
    throw DataError(e.what());
  }
  if (j.contains("scores")) s.scores = j.at("scores").get<std::vector<double>>();
  if (j.contains("bucket_ids")) s.bucket_ids = j.at("bucket_ids").get<std::vector<int>>();
  return s;
}

inline std::vector<ScoredExample> unscored(const std::vector<Example>& examples) {
  std::vector<ScoredExample> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back(ScoredExample{e, std::nullopt, std::nullopt});
  return out;
}

inline void write_dataset(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  if (data.table) os << nlohmann::json{{"bucket_table", to_json(*data.table)}}.dump() << '\n';
  for (const auto& s : data.examples) os << to_json(s).dump() << '\n';
  if (!os) throw DataError("failed writing '" + path.string() + "'");
}

inline void write_dataset(const std::filesystem::path& path, const std::vector<Example>& examples) {
  write_dataset(path, Dataset{std::nullopt, unscored(examples)});
}

inline Dataset read_dataset(const std::filesystem::path& path, std::size_t max_seq_len = kMaxExampleLength) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open dataset '" + path.string() + "'");
  Dataset data;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (!j.is_object()) throw DataError("record is not a JSON object");
      if (j.contains("bucket_table")) {
        if (line_no != 1) throw DataError("bucket_table header must be the first line");
        data.table = bucket_table_from_json(j.at("bucket_table"));
        continue;
      }
      auto s = scored_example_from_json(j);
      s.validate(max_seq_len);
      data.examples.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed record: " + e.what());
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return data;
}

}  // namespace trims
