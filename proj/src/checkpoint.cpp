#include "lingopt/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

namespace lingopt {

namespace {

constexpr char kMagic[16] = {'L', 'I', 'N', 'G', 'O', 'P', 'T', '-',
                             'C', 'K', 'P', 'T', '\0', 'v', '1', '\0'};

void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  }
  return v;
}

void put_f64_le(std::string& out, double d) {
  put_u64_le(out, std::bit_cast<std::uint64_t>(d));
}

double get_f64_le(const unsigned char* p) {
  return std::bit_cast<double>(get_u64_le(p));
}

std::map<std::string, std::string> parse_metadata(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw LoadError("checkpoint: malformed metadata line '" + line + "'");
    }
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

const std::string& require(const std::map<std::string, std::string>& kv,
                           const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) {
    throw LoadError("checkpoint: missing metadata key '" + key + "'");
  }
  return it->second;
}

long require_long(const std::map<std::string, std::string>& kv, const std::string& key) {
  try {
    return std::stol(require(kv, key));
  } catch (const LoadError&) {
    throw;
  } catch (const std::exception&) {
    throw LoadError("checkpoint: metadata key '" + key + "' is not an integer");
  }
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  parts.push_back(cur);
  return parts;
}

}  // namespace

void save_checkpoint(const std::string& path, const ToyModelParams& params) {
  std::ostringstream meta;
  meta << "format=toymodel-v1\n";
  meta << "d_model=" << params.config.d_model << "\n";
  meta << "d_ff=" << params.config.d_ff << "\n";
  meta << "max_seq_len=" << params.config.max_seq_len << "\n";
  meta << "use_cmaa_projections=" << (params.config.use_cmaa_projections ? 1 : 0) << "\n";
  meta << "linear_only=" << (params.config.linear_only ? 1 : 0) << "\n";
  meta << "vocab=";
  for (int i = 0; i < params.vocab.size(); ++i) {
    if (i > 0) meta << ' ';
    meta << params.vocab.token(i);
  }
  meta << "\n";
  meta << "tensors=";
  for (size_t i = 0; i < params.tensors.size(); ++i) {
    const auto& t = params.tensors[i];
    if (i > 0) meta << ',';
    meta << t.name << ':' << t.value.rows() << 'x' << t.value.cols() << ':'
         << (t.trainable ? 1 : 0);
  }
  meta << "\n";
  const std::string meta_str = meta.str();

  std::string blob;
  blob.append(kMagic, sizeof(kMagic));
  put_u64_le(blob, meta_str.size());
  blob += meta_str;
  for (const auto& t : params.tensors) {
    for (Eigen::Index r = 0; r < t.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) {
        put_f64_le(blob, t.value(r, c));
      }
    }
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw LoadError("checkpoint: cannot open '" + path + "' for writing");
  }
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) {
    throw LoadError("checkpoint: short write to '" + path + "'");
  }
}

ToyModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw LoadError("checkpoint: cannot open '" + path + "'");
  }
  std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (blob.size() < sizeof(kMagic) + 8 ||
      std::memcmp(blob.data(), kMagic, sizeof(kMagic)) != 0) {
    throw LoadError("checkpoint: '" + path + "' is not a toymodel-v1 checkpoint");
  }
  const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());
  const std::uint64_t meta_len = get_u64_le(bytes + sizeof(kMagic));
  const size_t meta_off = sizeof(kMagic) + 8;
  if (blob.size() < meta_off + meta_len) {
    throw LoadError("checkpoint: truncated metadata in '" + path + "'");
  }
  const auto kv = parse_metadata(blob.substr(meta_off, meta_len));
  if (require(kv, "format") != "toymodel-v1") {
    throw LoadError("checkpoint: unsupported format '" + require(kv, "format") + "'");
  }

  ToyModelParams params;
  params.config.d_model = static_cast<int>(require_long(kv, "d_model"));
  params.config.d_ff = static_cast<int>(require_long(kv, "d_ff"));
  params.config.max_seq_len = static_cast<int>(require_long(kv, "max_seq_len"));
  params.config.use_cmaa_projections = require_long(kv, "use_cmaa_projections") != 0;
  params.config.linear_only = require_long(kv, "linear_only") != 0;
  params.config.validate();
  params.vocab = Vocabulary::from_tokens(split(require(kv, "vocab"), ' '));

  size_t data_off = meta_off + meta_len;
  for (const std::string& entry : split(require(kv, "tensors"), ',')) {
    const auto fields = split(entry, ':');
    if (fields.size() != 3) {
      throw LoadError("checkpoint: malformed tensor entry '" + entry + "'");
    }
    const auto dims = split(fields[1], 'x');
    if (dims.size() != 2) {
      throw LoadError("checkpoint: malformed tensor shape '" + fields[1] + "'");
    }
    Eigen::Index rows, cols;
    try {
      rows = std::stol(dims[0]);
      cols = std::stol(dims[1]);
    } catch (const std::exception&) {
      throw LoadError("checkpoint: malformed tensor shape '" + fields[1] + "'");
    }
    if (rows <= 0 || cols <= 0) {
      throw LoadError("checkpoint: non-positive tensor shape '" + fields[1] + "'");
    }
    const size_t count = static_cast<size_t>(rows) * static_cast<size_t>(cols);
    if (blob.size() < data_off + count * 8) {
      throw LoadError("checkpoint: truncated tensor data in '" + path + "'");
    }
    NamedTensor t;
    t.name = fields[0];
    t.trainable = fields[2] == "1";
    t.value.resize(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        t.value(r, c) = get_f64_le(bytes + data_off);
        data_off += 8;
      }
    }
    params.tensors.push_back(std::move(t));
  }
  if (data_off != blob.size()) {
    throw LoadError("checkpoint: trailing bytes in '" + path + "'");
  }
  return params;
}

}  // namespace lingopt
