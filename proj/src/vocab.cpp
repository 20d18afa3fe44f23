#include "oclip/vocab.hpp"

#include "oclip/error.hpp"

namespace oclip {

CharVocab::CharVocab(std::string alphabet) : alphabet_(std::move(alphabet)), index_(256, -1) {
  require(!alphabet_.empty(), ErrorKind::kContract, "alphabet must not be empty");
  for (std::size_t i = 0; i < alphabet_.size(); ++i) {
    const auto c = static_cast<unsigned char>(alphabet_[i]);
    require(c > 32 && c < 127, ErrorKind::kContract,
            "alphabet symbols must be printable, non-space ASCII");
    require(index_[c] < 0, ErrorKind::kContract,
            std::string("duplicate alphabet symbol '") + alphabet_[i] + "'");
    index_[c] = static_cast<int>(i);
  }
}

bool CharVocab::contains(char c) const { return index_[static_cast<unsigned char>(c)] >= 0; }

std::size_t CharVocab::id(char c) const {
  const int i = index_[static_cast<unsigned char>(c)];
  require(i >= 0, ErrorKind::kIndex, std::string("symbol '") + c + "' not in alphabet");
  return static_cast<std::size_t>(i);
}

char CharVocab::symbol(std::size_t id) const {
  if (id < alphabet_.size()) return alphabet_[id];
  if (id == pad_id()) return '_';
  if (id == mask_id()) return '?';
  fail(ErrorKind::kIndex, "vocabulary id " + std::to_string(id) + " out of range");
}

std::vector<std::size_t> CharVocab::encode(std::string_view text) const {
  std::vector<std::size_t> ids;
  ids.reserve(text.size());
  for (char c : text) ids.push_back(id(c));
  return ids;
}

}  // namespace oclip
