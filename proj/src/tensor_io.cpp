#include "gprune/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <fstream>

#include <json.hpp>

#include "gprune/errors.hpp"

namespace gprune::num {

using ojson = nlohmann::ordered_json;

namespace {

void write_f32_le(std::ofstream& out, double v) {
  const uint32_t bits = std::bit_cast<uint32_t>(static_cast<float>(v));
  const unsigned char b[4] = {
      static_cast<unsigned char>(bits & 0xff),
      static_cast<unsigned char>((bits >> 8) & 0xff),
      static_cast<unsigned char>((bits >> 16) & 0xff),
      static_cast<unsigned char>((bits >> 24) & 0xff),
  };
  out.write(reinterpret_cast<const char*>(b), 4);
}

double read_f32_le(const unsigned char* p) {
  const uint32_t bits = static_cast<uint32_t>(p[0]) |
                        (static_cast<uint32_t>(p[1]) << 8) |
                        (static_cast<uint32_t>(p[2]) << 16) |
                        (static_cast<uint32_t>(p[3]) << 24);
  return static_cast<double>(std::bit_cast<float>(bits));
}

}  // namespace

void save_named_tensors(const std::vector<NamedTensor>& tensors,
                        const std::string& bin_path,
                        const std::string& manifest_path) {
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw IoError("cannot write '" + bin_path + "'");
  ojson manifest;
  manifest["entries"] = ojson::object();
  int64_t offset = 0;
  for (const auto& nt : tensors) {
    if (!nt.tensor.defined()) continue;
    ojson je;
    je["offset"] = offset;
    je["shape"] = nt.tensor.shape();
    manifest["entries"][nt.name] = std::move(je);
    for (double v : nt.tensor.data()) write_f32_le(bin, v);
    offset += 4 * nt.tensor.numel();
  }
  manifest["total_bytes"] = offset;
  bin.close();
  std::ofstream mf(manifest_path);
  if (!mf) throw IoError("cannot write '" + manifest_path + "'");
  mf << manifest.dump(2) << "\n";
}

std::map<std::string, Tensor> load_named_tensors(
    const std::string& bin_path, const std::string& manifest_path) {
  std::ifstream mf(manifest_path);
  if (!mf) throw IoError("cannot open '" + manifest_path + "'");
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad tensor manifest: ") + e.what());
  }
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw IoError("cannot open '" + bin_path + "'");
  std::vector<unsigned char> raw((std::istreambuf_iterator<char>(bin)),
                                 std::istreambuf_iterator<char>());
  std::map<std::string, Tensor> out;
  for (const auto& [key, je] : manifest["entries"].items()) {
    const int64_t offset = je["offset"].get<int64_t>();
    std::vector<int> shape = je["shape"].get<std::vector<int>>();
    const int64_t count = shape_numel(shape);
    if (offset < 0 || offset + 4 * count > static_cast<int64_t>(raw.size()))
      throw IoError("tensor entry '" + key + "' overruns the binary file");
    std::vector<double> data(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i)
      data[static_cast<size_t>(i)] = read_f32_le(raw.data() + offset + 4 * i);
    out[key] = Tensor::from_data(std::move(shape), std::move(data));
  }
  return out;
}

}  // namespace gprune::num
