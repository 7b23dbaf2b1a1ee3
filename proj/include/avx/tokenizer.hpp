#pragma once

// Byte-level tokenizer: ids 0..255 are raw bytes, followed by three specials.

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "avx/abi.hpp"

namespace avx::AVX_ABI_NS {

inline constexpr int kBos = 256;
inline constexpr int kEos = 257;
inline constexpr int kPad = 258;
inline constexpr int kVocabSize = 259;

std::vector<int> encode_bytes(std::string_view text);
// BOS + bytes of the question with {AUDIO}/{VIDEO}/{QUESTION} markers removed.
std::vector<int> encode_prompt(std::string_view question);
// Bytes of the answer + EOS.
std::vector<int> encode_answer(std::string_view answer);
// Drops special ids.
std::string decode(std::span<const int> ids);

std::string strip_placeholders(std::string_view text);

}  // namespace avx
