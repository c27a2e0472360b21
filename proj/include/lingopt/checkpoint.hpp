#pragma once

#include <string>

#include "lingopt/toymodel.hpp"

namespace lingopt {

// Binary model checkpoints. The format is deliberately simple: a fixed
// magic, a plain-text metadata block (config, vocabulary, tensor table),
// then raw little-endian f64 tensor data in declaration order. Saving and
// re-loading reproduces every tensor bit for bit.

void save_checkpoint(const std::string& path, const ToyModelParams& params);

ToyModelParams load_checkpoint(const std::string& path);

}  // namespace lingopt
