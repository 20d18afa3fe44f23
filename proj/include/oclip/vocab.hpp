#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace oclip {

// Printable symbols occupy ids [0, alphabet size); PAD and MASK follow.
class CharVocab {
 public:
  static constexpr std::string_view kDefaultAlphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

  explicit CharVocab(std::string alphabet = std::string(kDefaultAlphabet));

  std::size_t size() const { return alphabet_.size() + 2; }
  std::size_t pad_id() const { return alphabet_.size(); }
  std::size_t mask_id() const { return alphabet_.size() + 1; }
  const std::string& alphabet() const { return alphabet_; }

  bool contains(char c) const;
  std::size_t id(char c) const;
  // PAD and MASK render as '_' and '?'.
  char symbol(std::size_t id) const;

  std::vector<std::size_t> encode(std::string_view text) const;

 private:
  std::string alphabet_;
  std::vector<int> index_;  // by unsigned char, -1 when absent
};

}  // namespace oclip
