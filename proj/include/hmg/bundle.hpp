#pragma once

// Graph bundle ("hmg-bundle/1"): a directory holding
//
//   manifest.json       counts, dims, label map, format version
//   edges_connects.bin  u32 a, u32 b                       (one row per pair)
//   edges_views.bin     u32 user, u32 image, u8 label, u8 attr_missing,
//                       u32 attr_row                       (14 bytes per row)
//   feat_user.bin, feat_image.bin, attr_comment.bin
//                       HMGE: "HMGE" u32 version=1, u32 rows, u32 dim,
//                       then rows*dim float32
//
// All integers and floats are little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "hmg/error.hpp"
#include "hmg/graph.hpp"
#include "json.hpp"

namespace hmg {

inline constexpr std::string_view kBundleFormat = "hmg-bundle/1";
inline constexpr std::uint32_t kHmgeVersion = 1;

namespace io {

template <typename T>
T byteswap_if_needed(T v) {
  if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
    return v;
  } else {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
}

template <typename T>
void put(std::vector<unsigned char>& buf, T v) {
  v = byteswap_if_needed(v);
  const auto* p = reinterpret_cast<const unsigned char*>(&v);
  buf.insert(buf.end(), p, p + sizeof(T));
}

class Reader {
 public:
  Reader(std::vector<unsigned char> bytes, std::string origin) : bytes_(std::move(bytes)), origin_(std::move(origin)) {}

  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > bytes_.size()) throw Error(ErrorKind::kTruncated, origin_ + ": unexpected end of file");
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return byteswap_if_needed(v);
  }

  void read_bytes(void* dst, std::size_t n) {
    if (pos_ + n > bytes_.size()) throw Error(ErrorKind::kTruncated, origin_ + ": unexpected end of file");
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }
  const std::string& origin() const { return origin_; }

 private:
  std::vector<unsigned char> bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::kIo, "write failed for " + path.string());
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::kIo, "write failed for " + path.string());
}

}  // namespace io

inline std::vector<unsigned char> encode_hmge(const FeatureTable& t) {
  std::vector<unsigned char> buf;
  buf.reserve(16 + t.data.size() * 4);
  buf.insert(buf.end(), {'H', 'M', 'G', 'E'});
  io::put<std::uint32_t>(buf, kHmgeVersion);
  io::put<std::uint32_t>(buf, t.rows);
  io::put<std::uint32_t>(buf, t.dim);
  if constexpr (std::endian::native == std::endian::little) {
    const auto* p = reinterpret_cast<const unsigned char*>(t.data.data());
    buf.insert(buf.end(), p, p + t.data.size() * sizeof(float));
  } else {
    for (float v : t.data) io::put<float>(buf, v);
  }
  return buf;
}

inline FeatureTable decode_hmge(io::Reader& in) {
  char magic[4];
  in.read_bytes(magic, 4);
  if (std::memcmp(magic, "HMGE", 4) != 0) throw Error(ErrorKind::kMalformedHeader, in.origin() + ": bad magic");
  const auto version = in.get<std::uint32_t>();
  if (version != kHmgeVersion) {
    throw Error(ErrorKind::kMalformedHeader, in.origin() + ": unsupported version " + std::to_string(version));
  }
  FeatureTable t;
  t.rows = in.get<std::uint32_t>();
  t.dim = in.get<std::uint32_t>();
  const std::size_t n = static_cast<std::size_t>(t.rows) * t.dim;
  if (in.remaining() < n * sizeof(float)) {
    throw Error(ErrorKind::kTruncated, in.origin() + ": payload shorter than rows*dim");
  }
  if (in.remaining() > n * sizeof(float)) {
    throw Error(ErrorKind::kCountMismatch, in.origin() + ": trailing bytes after payload");
  }
  t.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) t.data[i] = in.get<float>();
  return t;
}

inline void write_hmge(const std::filesystem::path& path, const FeatureTable& t) { io::write_file(path, encode_hmge(t)); }

inline FeatureTable read_hmge(const std::filesystem::path& path) {
  io::Reader in(io::read_file(path), path.string());
  return decode_hmge(in);
}

inline nlohmann::json bundle_manifest(const HeteroGraph& g) {
  const GraphStats s = g.stats();
  nlohmann::json labels = nlohmann::json::object();
  for (std::size_t k = 0; k < kEmotionNames.size(); ++k) labels[std::to_string(k)] = kEmotionNames[k];
  return {
      {"format", kBundleFormat},
      {"counts", {{"users", s.users}, {"images", s.images}, {"connects", s.connects}, {"views", s.views},
                  {"comment_rows", g.comment_attrs().rows}}},
      {"dims", {{"user", s.user_dim}, {"image", s.image_dim}, {"comment", s.attr_dim}}},
      {"labels", labels},
      {"files", {{"connects", "edges_connects.bin"}, {"views", "edges_views.bin"}, {"user_features", "feat_user.bin"},
                 {"image_features", "feat_image.bin"}, {"comment_attrs", "attr_comment.bin"}}},
  };
}

inline void save_graph(const HeteroGraph& g, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create " + dir.string() + ": " + ec.message());

  std::vector<unsigned char> conn;
  conn.reserve(g.connects().size() * 8);
  for (const auto& [a, b] : g.connects()) {
    io::put<std::uint32_t>(conn, a);
    io::put<std::uint32_t>(conn, b);
  }
  std::vector<unsigned char> views;
  views.reserve(g.views().size() * 14);
  for (const ViewsEdge& e : g.views()) {
    io::put<std::uint32_t>(views, e.user);
    io::put<std::uint32_t>(views, e.image);
    io::put<std::uint8_t>(views, e.label);
    io::put<std::uint8_t>(views, e.attr_missing ? 1 : 0);
    io::put<std::uint32_t>(views, e.attr_missing ? 0u : e.attr_row);
  }
  io::write_file(dir / "edges_connects.bin", conn);
  io::write_file(dir / "edges_views.bin", views);
  write_hmge(dir / "feat_user.bin", g.user_features());
  write_hmge(dir / "feat_image.bin", g.image_features());
  write_hmge(dir / "attr_comment.bin", g.comment_attrs());
  io::write_text(dir / "manifest.json", bundle_manifest(g).dump(2) + "\n");
}

inline HeteroGraph load_graph(const std::filesystem::path& dir) {
  nlohmann::json m;
  {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw Error(ErrorKind::kIo, "cannot open " + (dir / "manifest.json").string());
    try {
      m = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kMalformedHeader, "manifest.json: " + std::string(e.what()));
    }
  }
  std::size_t n_conn = 0, n_views = 0;
  std::uint32_t users = 0, images = 0;
  try {
    if (m.at("format").get<std::string>() != kBundleFormat) {
      throw Error(ErrorKind::kMalformedHeader, "manifest format is not " + std::string(kBundleFormat));
    }
    const auto& c = m.at("counts");
    users = c.at("users").get<std::uint32_t>();
    images = c.at("images").get<std::uint32_t>();
    n_conn = c.at("connects").get<std::size_t>();
    n_views = c.at("views").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kMalformedHeader, "manifest.json: " + std::string(e.what()));
  }

  const auto conn_bytes = io::read_file(dir / "edges_connects.bin");
  if (conn_bytes.size() != n_conn * 8) {
    throw Error(ErrorKind::kCountMismatch, "edges_connects.bin holds " + std::to_string(conn_bytes.size()) +
                                               " bytes, manifest says " + std::to_string(n_conn) + " rows");
  }
  const auto view_bytes = io::read_file(dir / "edges_views.bin");
  if (view_bytes.size() != n_views * 14) {
    throw Error(ErrorKind::kCountMismatch, "edges_views.bin holds " + std::to_string(view_bytes.size()) +
                                               " bytes, manifest says " + std::to_string(n_views) + " rows");
  }
  io::Reader cr(conn_bytes, "edges_connects.bin");
  std::vector<std::pair<std::uint32_t, std::uint32_t>> connects(n_conn);
  for (auto& [a, b] : connects) {
    a = cr.get<std::uint32_t>();
    b = cr.get<std::uint32_t>();
  }
  io::Reader vr(view_bytes, "edges_views.bin");
  std::vector<ViewsEdge> views(n_views);
  for (ViewsEdge& e : views) {
    e.user = vr.get<std::uint32_t>();
    e.image = vr.get<std::uint32_t>();
    e.label = vr.get<std::uint8_t>();
    e.attr_missing = vr.get<std::uint8_t>() != 0;
    e.attr_row = vr.get<std::uint32_t>();
    if (e.attr_missing) e.attr_row = kNoAttrRow;
  }
  FeatureTable uf = read_hmge(dir / "feat_user.bin");
  FeatureTable imf = read_hmge(dir / "feat_image.bin");
  FeatureTable cf = read_hmge(dir / "attr_comment.bin");
  if (uf.rows != users || imf.rows != images) {
    throw Error(ErrorKind::kCountMismatch, "feature rows disagree with manifest node counts");
  }
  return build_graph(users, images, std::move(connects), std::move(views), std::move(uf), std::move(imf),
                     std::move(cf));
}

}  // namespace hmg
