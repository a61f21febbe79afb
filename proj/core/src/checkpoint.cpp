#include "bgrto/checkpoint.hpp"

#include <bit>

#include "bgrto/errors.hpp"
#include "bgrto/io.hpp"

namespace bgrto::checkpoint {

namespace {

template <class U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Cursor {
 public:
  explicit Cursor(std::string_view bytes) : bytes_(bytes) {}

  template <class U>
  U le(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const noexcept { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("checkpoint truncated while reading ") + what);
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode(const Checkpoint& ckpt) {
  std::string out(kMagic, sizeof kMagic);
  put_le<std::uint32_t>(out, kVersion);
  nlohmann::json metadata = ckpt.metadata;
  metadata["tensor_count"] = ckpt.tensors.size();
  const std::string meta = metadata.dump();
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
  out += meta;
  for (const auto& [name, t] : ckpt.tensors) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.dims()) put_le<std::uint64_t>(out, d);
    for (double v : t.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Checkpoint decode(std::string_view bytes) {
  Cursor c(bytes);
  if (c.take(sizeof kMagic, "magic") != std::string_view(kMagic, sizeof kMagic)) {
    throw FormatError("not a checkpoint (bad magic bytes)");
  }
  const auto version = c.le<std::uint32_t>("version");
  if (version != kVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) + " does not match supported version " +
                      std::to_string(kVersion));
  }
  Checkpoint ckpt;
  const auto meta_len = c.le<std::uint32_t>("metadata length");
  try {
    ckpt.metadata = nlohmann::json::parse(c.take(meta_len, "metadata"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
  if (!ckpt.metadata.is_object()) throw FormatError("checkpoint metadata must be a JSON object");
  const auto count_it = ckpt.metadata.find("tensor_count");
  if (count_it == ckpt.metadata.end() || !count_it->is_number_unsigned()) {
    throw FormatError("checkpoint metadata lacks tensor_count");
  }
  const auto count = count_it->get<std::size_t>();
  ckpt.metadata.erase("tensor_count");
  for (std::size_t k = 0; k < count; ++k) {
    const auto name_len = c.le<std::uint32_t>("tensor name length");
    std::string name(c.take(name_len, "tensor name"));
    const auto rank = c.le<std::uint32_t>("tensor rank");
    if (rank > 8) throw FormatError("checkpoint tensor '" + name + "' has implausible rank " + std::to_string(rank));
    Dims dims;
    std::size_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      dims.push_back(static_cast<std::size_t>(c.le<std::uint64_t>("tensor dims")));
      if (dims.back() != 0 && n > bytes.size() / dims.back()) throw FormatError("checkpoint tensor '" + name + "' is too large");
      n *= dims.back();
    }
    if (n > bytes.size() / 8) throw FormatError("checkpoint truncated while reading tensor values");
    std::vector<double> values(n);
    for (auto& v : values) v = std::bit_cast<double>(c.le<std::uint64_t>("tensor values"));
    if (!ckpt.tensors.emplace(name, Tensor(std::move(dims), std::move(values))).second) {
      throw FormatError("checkpoint repeats tensor '" + name + "'");
    }
  }
  if (!c.done()) throw FormatError("checkpoint has trailing bytes");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  io::atomic_write(path, encode(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_hash) {
  Checkpoint ckpt;
  try {
    ckpt = decode(io::read_file(path));
  } catch (const FormatError& e) {
    throw FormatError("'" + path.string() + "': " + e.what());
  }
  if (!expected_hash.empty()) {
    const auto it = ckpt.metadata.find("config_hash");
    const std::string stored = it != ckpt.metadata.end() && it->is_string() ? it->get<std::string>() : "";
    if (stored != expected_hash) {
      throw FormatError("'" + path.string() + "': config hash " + (stored.empty() ? "<missing>" : stored) +
                        " does not match the current config hash " + expected_hash);
    }
  }
  return ckpt;
}

NamedParams subset(const NamedParams& tensors, const std::string& prefix) {
  NamedParams out;
  for (const auto& [name, t] : tensors) {
    if (name.starts_with(prefix)) out.emplace(name, t);
  }
  return out;
}

bool bit_equal(const Checkpoint& a, const Checkpoint& b) noexcept {
  return a.metadata.dump() == b.metadata.dump() && bgrto::bit_equal(a.tensors, b.tensors);
}

}  // namespace bgrto::checkpoint
