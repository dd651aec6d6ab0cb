#include <bit>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>

#include "healnet/error.hpp"
#include "healnet/nn.hpp"

namespace healnet::nn {

namespace {

constexpr std::string_view kMagic = "HEALNET-CHECKPOINT 1";

void put_f32(std::string& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

float get_f32(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

bool has_space(std::string_view s) { return s.find_first_of(" \t\r\n") != std::string_view::npos; }

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParameterList& params,
                     const std::map<std::string, std::string>& meta) {
  std::ostringstream header;
  header << kMagic << '\n';
  for (const auto& [key, value] : meta) {
    if (has_space(key) || has_space(value) || key.empty() || value.empty()) {
      throw ValueError("checkpoint meta entries must be non-empty and free of whitespace: " + key);
    }
    header << "meta " << key << ' ' << value << '\n';
  }
  std::string payload;
  std::size_t offset = 0;
  for (const auto& p : params) {
    if (has_space(p.name)) throw ValueError("parameter name contains whitespace: " + p.name);
    header << "param " << p.name << ' ' << p.tensor.rank();
    for (auto d : p.tensor.shape()) header << ' ' << d;
    header << ' ' << offset << '\n';
    for (double v : p.tensor.data()) put_f32(payload, static_cast<float>(v));
    offset += 4 * p.tensor.numel();
  }
  header << "end\n";

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  const std::string h = header.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("short write on checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw DataError(path.string() + ": not a healnet checkpoint");

  Checkpoint ckpt;
  std::vector<std::size_t> offsets;
  bool ended = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "end") {
      ended = true;
      break;
    }
    if (tag == "meta") {
      std::string key, value;
      if (!(ls >> key >> value)) throw DataError(path.string() + ": malformed meta line '" + line + "'");
      ckpt.meta[key] = value;
    } else if (tag == "param") {
      CheckpointEntry e;
      std::size_t rank = 0, offset = 0;
      if (!(ls >> e.name >> rank)) throw DataError(path.string() + ": malformed param line '" + line + "'");
      e.shape.resize(rank);
      for (auto& d : e.shape) ls >> d;
      if (!(ls >> offset)) throw DataError(path.string() + ": malformed param line '" + line + "'");
      offsets.push_back(offset);
      ckpt.entries.push_back(std::move(e));
    } else {
      throw DataError(path.string() + ": unexpected header line '" + line + "'");
    }
  }
  if (!ended) throw DataError(path.string() + ": header not terminated");

  std::vector<unsigned char> payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  for (std::size_t i = 0; i < ckpt.entries.size(); ++i) {
    auto& e = ckpt.entries[i];
    const std::size_t n = shape_numel(e.shape);
    if (offsets[i] + 4 * n > payload.size()) throw DataError(path.string() + ": payload truncated at " + e.name);
    e.values.resize(n);
    for (std::size_t j = 0; j < n; ++j) e.values[j] = get_f32(payload.data() + offsets[i] + 4 * j);
  }
  return ckpt;
}

void load_parameters(const Checkpoint& checkpoint, ParameterList& params, std::string_view prefix) {
  std::map<std::string, const CheckpointEntry*> available;
  for (const auto& e : checkpoint.entries) {
    if (e.name.starts_with(prefix)) available[e.name] = &e;
  }
  std::vector<std::string> missing, misshaped;
  std::set<std::string> used;
  for (const auto& p : params) {
    auto it = available.find(p.name);
    if (it == available.end()) {
      missing.push_back(p.name);
    } else if (it->second->shape != p.tensor.shape()) {
      misshaped.push_back(p.name + " (checkpoint " + shape_string(it->second->shape) + ", model " +
                          shape_string(p.tensor.shape()) + ")");
    }
    used.insert(p.name);
  }
  std::vector<std::string> extra;
  for (const auto& [name, _] : available) {
    if (!used.count(name)) extra.push_back(name);
  }
  if (!missing.empty() || !extra.empty() || !misshaped.empty()) {
    std::ostringstream msg;
    msg << "checkpoint does not match architecture;";
    auto list = [&](const char* label, const std::vector<std::string>& names) {
      if (names.empty()) return;
      msg << ' ' << label << ':';
      for (const auto& n : names) msg << ' ' << n;
      msg << ';';
    };
    list("missing", missing);
    list("extra", extra);
    list("mis-shaped", misshaped);
    throw DataError(msg.str());
  }
  for (auto& p : params) {
    const auto& src = available.at(p.name)->values;
    auto dst = p.tensor.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<double>(src[i]);
  }
}

}  // namespace healnet::nn
