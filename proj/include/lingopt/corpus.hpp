#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lingopt/image.hpp"
#include "lingopt/toymodel.hpp"
#include "lingopt/vocab.hpp"

namespace lingopt::corpus {

// Deterministic toy corpus: sixteen question/answer pairs that share one
// question and differ only in the image, so a model can answer correctly
// only by actually reading the visual input. Doubles as the evaluation
// fixture (JSONL records with ranking options).

inline constexpr std::uint64_t kDefaultSeed = 7;
inline constexpr int kPairCount = 16;

const std::string& question();
const std::array<std::string, kPairCount>& answers();

// Short-answer prompt with a "{}" slot for the question.
const std::string& default_template();

// 8x8 grid with pixels drawn from a generator seeded by (seed, k).
ImageGrid fixture_image(int k, std::uint64_t seed = kDefaultSeed);

// The instantiated training prompt shared by all pairs.
std::string training_prompt();

// Vocabulary covering the prompt, all answers, and the multi-turn record.
Vocabulary toy_vocab();

std::vector<TrainExample> training_pairs(std::uint64_t seed = kDefaultSeed);

// Four ranking candidates for record k; the gold answer sits at index k % 4.
std::vector<std::string> ranking_options(int k);

// Line-delimited JSON evaluation records (rec00..rec15, plus an optional
// three-turn dialogue record rec16).
std::string dataset_jsonl(std::uint64_t seed = kDefaultSeed, bool include_multi_turn = false);
void write_dataset(const std::string& path, std::uint64_t seed = kDefaultSeed,
                   bool include_multi_turn = false);

}  // namespace lingopt::corpus
