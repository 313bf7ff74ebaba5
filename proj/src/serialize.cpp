#include "odpfl/serialize.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "bundle serialization assumes a little-endian host");

namespace odpfl {

namespace {

constexpr char kMagic[4] = {'O', 'D', 'P', 'B'};
constexpr uint32_t kVersion = 1;

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  uint8_t b[4];
  std::memcpy(b, &v, 4);
  out.insert(out.end(), b, b + 4);
}

uint32_t get_u32(const std::vector<uint8_t>& in, size_t& pos) {
  if (pos + 4 > in.size()) throw std::runtime_error("bundle data truncated");
  uint32_t v;
  std::memcpy(&v, in.data() + pos, 4);
  pos += 4;
  return v;
}

}  // namespace

std::vector<uint8_t> serialize_bundle(const WeightBundle& bundle) {
  std::vector<uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<uint32_t>(bundle.size()));
  for (size_t i = 0; i < bundle.size(); ++i) {
    const std::string& name = bundle.name(i);
    put_u32(out, static_cast<uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
  }
  for (size_t i = 0; i < bundle.size(); ++i) {
    const Tensor& t = bundle.tensor(i);
    put_u32(out, static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) put_u32(out, static_cast<uint32_t>(d));
  }
  for (size_t i = 0; i < bundle.size(); ++i) {
    const Tensor& t = bundle.tensor(i);
    size_t bytes = t.size() * sizeof(double);
    size_t at = out.size();
    out.resize(at + bytes);
    std::memcpy(out.data() + at, t.v.data(), bytes);
  }
  return out;
}

WeightBundle deserialize_bundle(const std::vector<uint8_t>& bytes) {
  size_t pos = 0;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw std::runtime_error("bundle data has wrong magic bytes");
  pos = 4;
  uint32_t version = get_u32(bytes, pos);
  if (version != kVersion)
    throw std::runtime_error("bundle version " + std::to_string(version) + " unsupported");
  uint32_t count = get_u32(bytes, pos);
  std::vector<std::string> names(count);
  for (auto& name : names) {
    uint32_t len = get_u32(bytes, pos);
    if (pos + len > bytes.size()) throw std::runtime_error("bundle data truncated");
    name.assign(reinterpret_cast<const char*>(bytes.data() + pos), len);
    pos += len;
  }
  std::vector<std::vector<int>> shapes(count);
  for (auto& shape : shapes) {
    uint32_t rank = get_u32(bytes, pos);
    shape.resize(rank);
    for (auto& d : shape) d = static_cast<int>(get_u32(bytes, pos));
  }
  WeightBundle out;
  for (uint32_t i = 0; i < count; ++i) {
    Tensor t = Tensor::zeros(shapes[i]);
    size_t nbytes = t.size() * sizeof(double);
    if (pos + nbytes > bytes.size()) throw std::runtime_error("bundle data truncated");
    std::memcpy(t.v.data(), bytes.data() + pos, nbytes);
    pos += nbytes;
    out.add(names[i], std::move(t));
  }
  return out;
}

void save_bundle(const WeightBundle& bundle, const std::string& path) {
  std::vector<uint8_t> bytes = serialize_bundle(bundle);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed for " + path);
}

WeightBundle load_bundle(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_bundle(bytes);
}

size_t bundle_byte_size(const WeightBundle& bundle) {
  size_t n = 4 + 4 + 4;
  for (size_t i = 0; i < bundle.size(); ++i) {
    n += 4 + bundle.name(i).size();
    n += 4 + 4 * bundle.tensor(i).shape.size();
    n += sizeof(double) * bundle.tensor(i).size();
  }
  return n;
}

void save_descriptor(const Tensor& descriptor, const std::string& path) {
  WeightBundle b;
  b.add("descriptor", descriptor);
  save_bundle(b, path);
}

Tensor load_descriptor(const std::string& path) { return load_bundle(path).at("descriptor"); }

size_t descriptor_byte_size(const Tensor& descriptor) {
  WeightBundle b;
  b.add("descriptor", descriptor);
  return bundle_byte_size(b);
}

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void save_bundle_csv(const WeightBundle& bundle, const std::string& path) {
  std::ostringstream os;
  for (size_t i = 0; i < bundle.size(); ++i) {
    const Tensor& t = bundle.tensor(i);
    os << bundle.name(i) << ",";
    for (size_t d = 0; d < t.shape.size(); ++d) os << (d ? "x" : "") << t.shape[d];
    for (double v : t.v) os << "," << format_g17(v);
    os << "\n";
  }
  write_text_file(path, os.str());
}

WeightBundle load_bundle_csv(const std::string& path) {
  std::istringstream is(read_text_file(path));
  WeightBundle out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() < 3) throw std::runtime_error("bundle csv: malformed row in " + path);
    std::vector<int> shape;
    std::stringstream dims(cells[1]);
    std::string d;
    while (std::getline(dims, d, 'x')) shape.push_back(std::stoi(d));
    std::vector<double> values;
    values.reserve(cells.size() - 2);
    for (size_t i = 2; i < cells.size(); ++i) values.push_back(std::stod(cells[i]));
    out.add(cells[0], Tensor(shape, std::move(values)));
  }
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  cells.push_back(cur);
  return cells;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << content;
  if (!f) throw std::runtime_error("write failed for " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

}  // namespace odpfl
