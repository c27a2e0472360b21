#include "lingopt/corpus.hpp"

#include <fstream>
#include <random>

#include <json.hpp>

#include "lingopt/errors.hpp"
#include "lingopt/text.hpp"

namespace lingopt::corpus {

namespace {

// Three extra dialogue turns exercising multi-turn prompt construction.
struct Turn {
  const char* q;
  const char* a;
};
constexpr Turn kMultiTurn[] = {
    {"is there an animal here", "yes"},
    {"is it large", "no"},
    {"what is shown in the picture", "fox"},
};
constexpr int kMultiTurnImage = 2;  // fixture_image index whose answer is "fox"

}  // namespace

const std::string& question() {
  static const std::string q = "what is shown in the picture";
  return q;
}

const std::array<std::string, kPairCount>& answers() {
  static const std::array<std::string, kPairCount> a = {
      "cat", "dog", "fox", "owl", "bee", "ant", "elk", "bat",
      "cow", "hen", "pig", "ram", "eel", "jay", "koi", "yak"};
  return a;
}

const std::string& default_template() {
  static const std::string t = "<Image>Question: {} \n Short answer:";
  return t;
}

ImageGrid fixture_image(int k, std::uint64_t seed) {
  if (k < 0) throw PreconditionError("fixture_image: negative index");
  std::mt19937_64 g((seed << 8) | static_cast<std::uint64_t>(k));
  ImageGrid img;
  img.height = 8;
  img.width = 8;
  img.pixels.resize(64);
  for (double& p : img.pixels) {
    p = static_cast<double>(g() >> 11) * 0x1.0p-53;
  }
  return img;
}

std::string training_prompt() {
  return instantiate_template(default_template(), question());
}

Vocabulary toy_vocab() {
  std::vector<std::string> words;
  auto add_text = [&](const std::string& text) {
    for (const auto& w : Vocabulary::split_words(text)) words.push_back(w);
  };
  add_text(strip_image_sentinel(training_prompt()));
  for (const auto& a : answers()) words.push_back(a);
  for (const auto& turn : kMultiTurn) {
    add_text(turn.q);
    add_text(turn.a);
  }
  return Vocabulary::build(words);
}

std::vector<TrainExample> training_pairs(std::uint64_t seed) {
  std::vector<TrainExample> pairs;
  pairs.reserve(kPairCount);
  for (int k = 0; k < kPairCount; ++k) {
    pairs.push_back({fixture_image(k, seed), training_prompt(), answers()[k]});
  }
  return pairs;
}

std::vector<std::string> ranking_options(int k) {
  if (k < 0 || k >= kPairCount) {
    throw PreconditionError("ranking_options: record index out of range");
  }
  const auto& a = answers();
  std::vector<std::string> distractors = {a[(k + 1) % kPairCount], a[(k + 5) % kPairCount],
                                          a[(k + 9) % kPairCount]};
  std::vector<std::string> options = distractors;
  options.insert(options.begin() + (k % 4), a[k]);
  return options;
}

std::string dataset_jsonl(std::uint64_t seed, bool include_multi_turn) {
  using nlohmann::json;
  std::string out;
  auto record_line = [](const json& j) { return j.dump() + "\n"; };

  for (int k = 0; k < kPairCount; ++k) {
    char id[8];
    std::snprintf(id, sizeof(id), "rec%02d", k);
    json rec;
    rec["record_id"] = id;
    rec["image"] = {{"kind", "inline"}, {"value", grid_to_base64(fixture_image(k, seed))}};
    rec["turns"] = json::array({{{"q", question()}, {"a", answers()[k]}}});
    rec["options"] = ranking_options(k);
    out += record_line(rec);
  }

  if (include_multi_turn) {
    json rec;
    rec["record_id"] = "rec16";
    rec["image"] = {{"kind", "inline"},
                    {"value", grid_to_base64(fixture_image(kMultiTurnImage, seed))}};
    json turns = json::array();
    for (const auto& t : kMultiTurn) {
      turns.push_back({{"q", t.q}, {"a", t.a}});
    }
    rec["turns"] = turns;
    rec["options"] = ranking_options(kMultiTurnImage);
    out += record_line(rec);
  }
  return out;
}

void write_dataset(const std::string& path, std::uint64_t seed, bool include_multi_turn) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw LoadError("dataset: cannot open '" + path + "' for writing");
  }
  out << dataset_jsonl(seed, include_multi_turn);
}

}  // namespace lingopt::corpus
