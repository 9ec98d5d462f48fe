#include "gava/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace gava {

namespace {

constexpr const char* kMagic = "GAVA-CHECKPOINT";

struct Entry {
  std::string name;
  Shape shape;
  std::size_t offset = 0;  // in float32 elements from the start of the data block
};

struct Header {
  int version = 0;
  std::string fingerprint;
  std::string config_text;
  std::vector<Entry> entries;
};

std::vector<NamedTensor> all_tensors(const GavaModel& model) {
  std::vector<NamedTensor> out = model.store().params();
  const auto& buffers = model.store().buffers();
  out.insert(out.end(), buffers.begin(), buffers.end());
  return out;
}

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
  return v;
}

Header read_header(std::istream& in) {
  Header h;
  std::string magic;
  if (!(in >> magic >> h.version) || magic != kMagic) throw DataError("not a checkpoint (bad magic)");
  if (h.version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(h.version));
  }
  std::string key;
  std::size_t config_bytes = 0, count = 0;
  if (!(in >> key >> h.fingerprint) || key != "fingerprint") throw DataError("checkpoint: missing fingerprint");
  if (!(in >> key >> config_bytes) || key != "config") throw DataError("checkpoint: missing config block");
  in.get();
  h.config_text.resize(config_bytes);
  in.read(h.config_text.data(), static_cast<std::streamsize>(config_bytes));
  if (!(in >> key >> count) || key != "entries") throw DataError("checkpoint: missing entry table");
  for (std::size_t i = 0; i < count; ++i) {
    Entry e;
    std::size_t rank = 0;
    if (!(in >> key >> e.name >> rank) || key != "entry") throw DataError("checkpoint: bad entry line");
    e.shape.resize(rank);
    for (auto& d : e.shape) in >> d;
    if (!(in >> e.offset)) throw DataError("checkpoint: bad entry line for " + e.name);
    h.entries.push_back(std::move(e));
  }
  if (!(in >> key) || key != "data") throw DataError("checkpoint: missing data marker");
  in.get();
  return h;
}

}  // namespace

void save_checkpoint(const GavaModel& model, std::ostream& out) {
  const auto tensors = all_tensors(model);
  const std::string config_text = model.config().serialize();
  out << kMagic << ' ' << kCheckpointVersion << '\n';
  out << "fingerprint " << model.config().fingerprint() << '\n';
  out << "config " << config_text.size() << '\n' << config_text << '\n';
  out << "entries " << tensors.size() << '\n';
  std::size_t offset = 0;
  for (const auto& t : tensors) {
    out << "entry " << t.name << ' ' << t.value.rank();
    for (auto d : t.value.shape()) out << ' ' << d;
    out << ' ' << offset << '\n';
    offset += t.value.size();
  }
  out << "data\n";
  for (const auto& t : tensors)
    for (double v : t.value.data()) {
      const std::uint32_t bits = to_le(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  if (!out) throw DataError("checkpoint: write failed");
}

void save_checkpoint(const GavaModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path);
  save_checkpoint(model, out);
}

bool load_parameters(GavaModel& model, std::istream& in, std::ostream* warn) {
  const Header h = read_header(in);
  const bool same = h.fingerprint == model.config().fingerprint();
  if (!same && warn) {
    *warn << "warning: checkpoint config fingerprint " << h.fingerprint << " differs from model config "
          << model.config().fingerprint() << '\n';
  }
  std::size_t total = 0;
  for (const auto& e : h.entries) total += shape_numel(e.shape);
  std::vector<std::uint32_t> raw(total);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(total * sizeof(std::uint32_t)));
  if (static_cast<std::size_t>(in.gcount()) != total * sizeof(std::uint32_t)) {
    throw DataError("checkpoint: truncated data block");
  }
  auto tensors = all_tensors(model);
  if (tensors.size() != h.entries.size()) {
    throw DataError("checkpoint has " + std::to_string(h.entries.size()) + " entries, model has " +
                    std::to_string(tensors.size()));
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const Entry& e = h.entries[i];
    auto& t = tensors[i];
    if (e.name != t.name || e.shape != t.value.shape()) {
      throw DataError("checkpoint entry " + e.name + " " + shape_str(e.shape) + " does not match model " + t.name +
                      " " + shape_str(t.value.shape()));
    }
    auto dst = t.value.mutable_data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = std::bit_cast<float>(to_le(raw[e.offset + j]));
  }
  return same;
}

bool load_parameters(GavaModel& model, const std::string& path, std::ostream* warn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  return load_parameters(model, in, warn);
}

TrainConfig checkpoint_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  return TrainConfig::parse(read_header(in).config_text);
}

std::unique_ptr<GavaModel> load_checkpoint(const std::string& path) {
  auto model = std::make_unique<GavaModel>(checkpoint_config(path));
  load_parameters(*model, path, nullptr);
  return model;
}

}  // namespace gava
