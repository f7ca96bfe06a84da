#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "trims/error.hpp"

namespace trims {

// Character-level vocabulary shared by teacher and student.
// Ids 0..2 are reserved symbols that tokenize() never produces.
inline constexpr int kPadId = 0;
inline constexpr int kMaskId = 1;
inline constexpr int kEndId = 2;  // end-of-answer; fills the response region after the completion
inline constexpr int kFirstCharId = 3;
inline constexpr std::string_view kCharset = " +,;=0123456789abcdefghnrsw";
inline constexpr int kVocabSize = kFirstCharId + static_cast<int>(kCharset.size());

inline int char_to_id(char c) {
  const auto pos = kCharset.find(c);
  return pos == std::string_view::npos ? -1 : kFirstCharId + static_cast<int>(pos);
}

inline std::vector<int> tokenize(std::string_view text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    const int id = char_to_id(text[i]);
    if (id < 0) {
      throw DataError("tokenize: character '" + std::string(1, text[i]) + "' (code " +
                      std::to_string(static_cast<unsigned char>(text[i])) + ") at position " + std::to_string(i) +
                      " is not in the vocabulary");
    }
    ids.push_back(id);
  }
  return ids;
}

inline std::string detokenize(const std::vector<int>& ids) {
  std::string out;
  out.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id < kFirstCharId || id >= kVocabSize) {
      throw DataError("detokenize: id " + std::to_string(id) + " at position " + std::to_string(i) +
                      " is not a character token");
    }
    out.push_back(kCharset[static_cast<std::size_t>(id - kFirstCharId)]);
  }
  return out;
}

// Lossy rendering for logs and traces: PAD '_', MASK '?', END '$'.
inline std::string render(const std::vector<int>& ids) {
  std::string out;
  for (int id : ids) {
    if (id == kPadId) out.push_back('_');
    else if (id == kMaskId) out.push_back('?');
    else if (id == kEndId) out.push_back('$');
    else if (id >= kFirstCharId && id < kVocabSize) out.push_back(kCharset[static_cast<std::size_t>(id - kFirstCharId)]);
    else out.push_back('!');
  }
  return out;
}

}  // namespace trims
