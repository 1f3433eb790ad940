#include "wrenchfield/datagen.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace wrenchfield {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

constexpr char kMagic[4] = {'W', 'S', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

}  // namespace

void write_dataset(const std::string& path, const Dataset& ds) {
  const auto& h = ds.header;
  if (h.count != ds.size()) throw DataError("header count does not match record count");
  const int H = h.h_win;
  if (ds.obs.cols() != H * h.obs_dim || ds.wrench.cols() != H * h.n_regions * h.wrench_dim ||
      ds.mask.cols() != H * h.n_regions)
    throw DataError("record shapes do not match the dataset header");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write dataset file: " + path);
  const std::string header = header_to_json(h);
  out.write(kMagic, 4);
  write_u32(out, kVersion);
  write_u32(out, static_cast<std::uint32_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (std::int64_t i = 0; i < ds.size(); ++i) {
    out.write(reinterpret_cast<const char*>(ds.obs.row(i).data()), ds.obs.cols() * 4);
    out.write(reinterpret_cast<const char*>(ds.wrench.row(i).data()), ds.wrench.cols() * 4);
    out.write(reinterpret_cast<const char*>(ds.mask.row(i).data()), ds.mask.cols() * 4);
  }
  if (!out) throw DataError("write failed: " + path);
}

namespace {

DatasetHeader read_header(std::ifstream& in, const std::string& path) {
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw DataError("bad magic in dataset file: " + path);
  std::uint32_t version = 0, len = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&len), 4);
  if (!in) throw DataError("truncated dataset header: " + path);
  if (version != kVersion) throw DataError("unsupported dataset version " + std::to_string(version) + ": " + path);
  std::string text(len, '\0');
  in.read(text.data(), len);
  if (!in) throw DataError("truncated dataset header: " + path);
  return header_from_json(text);
}

}  // namespace

DatasetHeader read_dataset_header(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset file: " + path);
  return read_header(in, path);
}

Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset file: " + path);
  Dataset ds;
  ds.header = read_header(in, path);
  const auto body_start = in.tellg();
  in.seekg(0, std::ios::end);
  const std::int64_t body_bytes = static_cast<std::int64_t>(in.tellg() - body_start);
  in.seekg(body_start);

  const std::int64_t count = ds.header.count;
  ds.resize(count);
  const std::int64_t record_bytes = 4 * (ds.obs.cols() + ds.wrench.cols() + ds.mask.cols());
  const std::int64_t found = body_bytes / record_bytes;
  if (found < count || body_bytes % record_bytes != 0) {
    if (found < count)
      throw DataError("truncated dataset body: expected " + std::to_string(count) + " records, found " +
                      std::to_string(found) + (body_bytes % record_bytes ? " and a partial record" : "") + ": " + path);
    throw DataError("dataset body holds a partial trailing record: " + path);
  }
  if (found > count)
    throw DataError("header/body count mismatch: header says " + std::to_string(count) + " records, body holds " +
                    std::to_string(found) + ": " + path);
  std::int64_t positives = 0;
  for (std::int64_t i = 0; i < count; ++i) {
    in.read(reinterpret_cast<char*>(ds.obs.row(i).data()), ds.obs.cols() * 4);
    in.read(reinterpret_cast<char*>(ds.wrench.row(i).data()), ds.wrench.cols() * 4);
    in.read(reinterpret_cast<char*>(ds.mask.row(i).data()), ds.mask.cols() * 4);
    positives += ds.positive(i);
  }
  if (!in) throw DataError("read failed: " + path);
  if (positives != ds.header.positive_count)
    throw DataError("header/body mismatch: header says " + std::to_string(ds.header.positive_count) +
                    " positive records, body holds " + std::to_string(positives) + ": " + path);
  return ds;
}

}  // namespace wrenchfield
