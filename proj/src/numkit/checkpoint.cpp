#include "numkit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace numkit {

namespace {

static_assert(sizeof(double) == 8, "checkpoint format requires 8-byte doubles");

void write_f64_le(std::ofstream& out, const std::vector<double>& values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * 8));
  } else {
    for (double v : values) {
      unsigned char b[8];
      std::memcpy(b, &v, 8);
      std::swap(b[0], b[7]);
      std::swap(b[1], b[6]);
      std::swap(b[2], b[5]);
      std::swap(b[3], b[4]);
      out.write(reinterpret_cast<const char*>(b), 8);
    }
  }
}

void read_f64_le(std::ifstream& in, std::vector<double>& values) {
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * 8));
  if (!in) throw std::runtime_error("checkpoint: truncated tensor payload");
  if constexpr (std::endian::native == std::endian::big) {
    for (double& v : values) {
      unsigned char b[8];
      std::memcpy(b, &v, 8);
      std::swap(b[0], b[7]);
      std::swap(b[1], b[6]);
      std::swap(b[2], b[5]);
      std::swap(b[3], b[4]);
      std::memcpy(&v, b, 8);
    }
  }
}

}  // namespace

const Tensor& Checkpoint::get(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::runtime_error("checkpoint: no tensor named '" + name + "'");
  return it->second;
}

void save_checkpoint(const std::string& path, const nlohmann::json& config,
                     const std::vector<std::pair<std::string, Tensor>>& tensors) {
  nlohmann::json header;
  header["config"] = config;
  header["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : tensors)
    header["tensors"].push_back({{"name", name}, {"shape", t.shape}});

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  out << header.dump() << "\n";
  for (const auto& [name, t] : tensors) write_f64_le(out, *t.data);
  if (!out) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  std::string header_line;
  if (!std::getline(in, header_line))
    throw std::runtime_error("checkpoint: missing header line in '" + path + "'");
  nlohmann::json header = nlohmann::json::parse(header_line);

  Checkpoint ck;
  ck.config = header.value("config", nlohmann::json::object());
  for (const auto& entry : header.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
    Tensor t(shape);
    read_f64_le(in, *t.data);
    ck.order.push_back(name);
    if (!ck.tensors.emplace(name, t).second)
      throw std::runtime_error("checkpoint: duplicate tensor '" + name + "' in '" + path + "'");
  }
  return ck;
}

}  // namespace numkit
