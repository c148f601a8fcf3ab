#include "revcd/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <json.hpp>

#include "revcd/binary_io.hpp"
#include "revcd/error.hpp"
#include "revcd/rng.hpp"

namespace revcd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string join_ids(const std::vector<std::uint32_t>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size() && i < 8; ++i) s += (i ? "," : "") + std::to_string(ids[i]);
  if (ids.size() > 8) s += ",...";
  return s;
}

void check_class_set(const std::vector<std::uint32_t>& ids, std::size_t n_classes, const char* what) {
  if (ids.empty()) throw ValidationError(std::string(what) + " class set is empty");
  std::set<std::uint32_t> seen;
  for (auto id : ids) {
    if (id >= n_classes)
      throw ValidationError(std::string(what) + " class id " + std::to_string(id) + " >= n_classes " +
                            std::to_string(n_classes));
    if (!seen.insert(id).second) throw ValidationError(std::string(what) + " class id " + std::to_string(id) + " repeated");
  }
}

void check_index_set(const std::vector<std::uint32_t>& idx, std::size_t n, const char* what) {
  std::set<std::uint32_t> seen;
  for (auto i : idx) {
    if (i >= n) throw ValidationError(std::string(what) + " index " + std::to_string(i) + " >= n " + std::to_string(n));
    if (!seen.insert(i).second) throw ValidationError(std::string(what) + " index " + std::to_string(i) + " repeated");
  }
}

}  // namespace

void GzslDataset::validate() const {
  if (features.rank() != 2 || features.empty()) throw ValidationError("features must be a non-empty [n x d_x] matrix");
  if (attributes.rank() != 2 || attributes.empty())
    throw ValidationError("attributes must be a non-empty [n_classes x d_s] matrix");
  if (features.rows() != labels.size())
    throw ValidationError("features have " + std::to_string(features.rows()) + " rows but there are " +
                          std::to_string(labels.size()) + " labels");
  if (!features.all_finite()) throw ValidationError("features contain NaN/Inf");
  for (std::size_t r = 0; r < labels.size(); ++r)
    if (labels[r] >= n_classes())
      throw ValidationError("label " + std::to_string(labels[r]) + " at row " + std::to_string(r) +
                            " >= n_classes " + std::to_string(n_classes()));
  for (std::size_t c = 0; c < n_classes(); ++c) {
    bool nonzero = false;
    for (float v : attributes.row(c)) {
      if (!(v >= 0.0f && v <= 1.0f))
        throw ValidationError("attribute of class " + std::to_string(c) + " outside [0,1]: " + std::to_string(v));
      nonzero = nonzero || v != 0.0f;
    }
    if (!nonzero) throw ValidationError("class " + std::to_string(c) + " has an all-zero attribute vector");
  }

  check_class_set(seen_classes, n_classes(), "seen");
  check_class_set(unseen_classes, n_classes(), "unseen");
  for (auto id : seen_classes)
    if (std::find(unseen_classes.begin(), unseen_classes.end(), id) != unseen_classes.end())
      throw ValidationError("class " + std::to_string(id) + " is both seen and unseen");

  check_index_set(train_seen, n(), "train_seen");
  check_index_set(test_seen, n(), "test_seen");
  check_index_set(test_unseen, n(), "test_unseen");
  if (train_seen.empty()) throw ValidationError("train_seen split is empty");

  std::vector<std::uint8_t> owner(n(), 0);
  auto claim = [&](const std::vector<std::uint32_t>& idx, std::uint8_t tag, const char* what,
                   const std::vector<std::uint32_t>& allowed, const char* allowed_name) {
    std::set<std::uint32_t> allow(allowed.begin(), allowed.end());
    for (auto i : idx) {
      if (owner[i]) throw ValidationError(std::string(what) + " row " + std::to_string(i) + " also appears in another split");
      owner[i] = tag;
      if (!allow.count(labels[i]))
        throw ValidationError(std::string(what) + " row " + std::to_string(i) + " has label " +
                              std::to_string(labels[i]) + " outside the " + allowed_name + " classes {" +
                              join_ids(allowed) + "}");
    }
  };
  claim(train_seen, 1, "train_seen", seen_classes, "seen");
  claim(test_seen, 2, "test_seen", seen_classes, "seen");
  claim(test_unseen, 3, "test_unseen", unseen_classes, "unseen");
}

SeenTrainView seen_train_view(const GzslDataset& ds) {
  if (ds.train_seen.empty()) throw ValidationError("train_seen split is empty");
  SeenTrainView view;
  const std::size_t n = ds.train_seen.size();
  view.semantics = Tensor<float>({n, ds.d_s()});
  view.features = Tensor<float>({n, ds.d_x()});
  view.seen_index.resize(n);
  view.rows = ds.train_seen;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = ds.train_seen[i];
    const auto label = ds.labels[row];
    auto it = std::find(ds.seen_classes.begin(), ds.seen_classes.end(), label);
    if (it == ds.seen_classes.end())
      throw ValidationError("train_seen row " + std::to_string(row) + " has non-seen label " + std::to_string(label));
    view.seen_index[i] = static_cast<std::size_t>(it - ds.seen_classes.begin());
    std::copy(ds.attributes.row(label).begin(), ds.attributes.row(label).end(), view.semantics.row(i).begin());
    std::copy(ds.features.row(row).begin(), ds.features.row(row).end(), view.features.row(i).begin());
  }
  return view;
}

bool normalize_attributes(Tensor<float>& attributes) {
  bool inside = true;
  for (float v : attributes.data()) inside = inside && v >= 0.0f && v <= 1.0f;
  if (inside) return false;
  const std::size_t rows = attributes.rows(), cols = attributes.cols();
  for (std::size_t c = 0; c < cols; ++c) {
    float lo = attributes(0, c), hi = attributes(0, c);
    for (std::size_t r = 1; r < rows; ++r) {
      lo = std::min(lo, attributes(r, c));
      hi = std::max(hi, attributes(r, c));
    }
    const float span = hi - lo;
    for (std::size_t r = 0; r < rows; ++r)
      attributes(r, c) = span > 0.0f ? std::clamp((attributes(r, c) - lo) / span, 0.0f, 1.0f) : 0.0f;
  }
  return true;
}

namespace {

template <typename J>
auto manifest_field(const json& m, const char* key, const fs::path& path) {
  if (!m.contains(key)) throw IoError(path.string() + ": manifest is missing \"" + std::string(key) + "\"");
  try {
    return m.at(key).get<J>();
  } catch (const json::exception&) {
    throw IoError(path.string() + ": manifest field \"" + std::string(key) + "\" has the wrong type");
  }
}

}  // namespace

GzslDataset load_dataset(const fs::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!fs::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
  if (!fs::exists(manifest_path)) throw IoError("missing manifest: " + manifest_path.string());
  json m;
  try {
    m = json::parse(io::read_file(manifest_path));
  } catch (const json::parse_error& e) {
    throw IoError(manifest_path.string() + ": malformed JSON: " + e.what());
  }
  if (manifest_field<std::string>(m, "format", manifest_path) != "rzd")
    throw IoError(manifest_path.string() + ": format is not \"rzd\"");
  const auto version = manifest_field<int>(m, "version", manifest_path);
  if (version != 1) throw IoError(manifest_path.string() + ": unsupported version " + std::to_string(version));

  GzslDataset ds;
  ds.name = m.value("name", std::string("dataset"));
  const auto n = manifest_field<std::size_t>(m, "n", manifest_path);
  const auto d_x = manifest_field<std::size_t>(m, "d_x", manifest_path);
  const auto d_s = manifest_field<std::size_t>(m, "d_s", manifest_path);
  const auto n_classes = manifest_field<std::size_t>(m, "n_classes", manifest_path);
  if (n == 0 || d_x == 0 || d_s == 0 || n_classes == 0)
    throw ValidationError(manifest_path.string() + ": n, d_x, d_s and n_classes must be positive");
  ds.seen_classes = manifest_field<std::vector<std::uint32_t>>(m, "seen_classes", manifest_path);
  ds.unseen_classes = manifest_field<std::vector<std::uint32_t>>(m, "unseen_classes", manifest_path);
  const auto files = manifest_field<json>(m, "files", manifest_path);

  auto file_of = [&](const char* key) {
    if (!files.contains(key) || !files.at(key).is_string())
      throw IoError(manifest_path.string() + ": files." + key + " missing");
    auto p = dir / files.at(key).get<std::string>();
    if (!fs::exists(p)) throw IoError("missing " + std::string(key) + " file: " + p.string());
    return p;
  };

  const auto fpath = file_of("features");
  auto features = io::decode_f32(io::read_file(fpath), fpath);
  if (features.size() != n * d_x)
    throw ValidationError(fpath.string() + ": holds " + std::to_string(features.size()) + " floats, manifest n*d_x = " +
                          std::to_string(n) + "*" + std::to_string(d_x));
  ds.features = Tensor<float>({n, d_x}, std::move(features));

  const auto lpath = file_of("labels");
  ds.labels = io::decode_u32(io::read_file(lpath), lpath);
  if (ds.labels.size() != n)
    throw ValidationError(lpath.string() + ": holds " + std::to_string(ds.labels.size()) + " labels, manifest n = " +
                          std::to_string(n));

  const auto apath = file_of("attributes");
  auto attributes = io::decode_f32(io::read_file(apath), apath);
  if (attributes.size() % d_s != 0 || attributes.size() / d_s != n_classes)
    throw ValidationError(apath.string() + ": manifest n_classes = " + std::to_string(n_classes) +
                          " but attributes hold " + std::to_string(attributes.size() / d_s) + " rows of d_s = " +
                          std::to_string(d_s) + (attributes.size() % d_s ? " (plus a partial row)" : ""));
  ds.attributes = Tensor<float>({n_classes, d_s}, std::move(attributes));
  if (!ds.attributes.all_finite()) throw ValidationError(apath.string() + ": attributes contain NaN/Inf");
  normalize_attributes(ds.attributes);

  const auto tr = file_of("train_seen");
  ds.train_seen = io::decode_u32(io::read_file(tr), tr);
  const auto ts = file_of("test_seen");
  ds.test_seen = io::decode_u32(io::read_file(ts), ts);
  const auto tu = file_of("test_unseen");
  ds.test_unseen = io::decode_u32(io::read_file(tu), tu);

  ds.validate();
  return ds;
}

void save_dataset(const GzslDataset& ds, const fs::path& dir) {
  ds.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string());
  json m;
  m["format"] = "rzd";
  m["version"] = 1;
  m["name"] = ds.name;
  m["n"] = ds.n();
  m["d_x"] = ds.d_x();
  m["d_s"] = ds.d_s();
  m["n_classes"] = ds.n_classes();
  m["seen_classes"] = ds.seen_classes;
  m["unseen_classes"] = ds.unseen_classes;
  m["files"] = {{"features", "features.bin"},       {"labels", "labels.bin"},
                {"attributes", "attributes.bin"},   {"train_seen", "train_seen_idx.bin"},
                {"test_seen", "test_seen_idx.bin"}, {"test_unseen", "test_unseen_idx.bin"}};
  io::write_file_atomic(dir / "features.bin", io::encode_f32(ds.features.data()));
  io::write_file_atomic(dir / "labels.bin", io::encode_u32(ds.labels));
  io::write_file_atomic(dir / "attributes.bin", io::encode_f32(ds.attributes.data()));
  io::write_file_atomic(dir / "train_seen_idx.bin", io::encode_u32(ds.train_seen));
  io::write_file_atomic(dir / "test_seen_idx.bin", io::encode_u32(ds.test_seen));
  io::write_file_atomic(dir / "test_unseen_idx.bin", io::encode_u32(ds.test_unseen));
  // Manifest last, so a complete manifest implies complete payloads.
  io::write_file_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

GzslDataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_seen < 1 || spec.n_unseen < 1) throw ConfigError("synthetic: n_seen and n_unseen must be >= 1");
  if (spec.d_s < 1 || spec.d_x < 1) throw ConfigError("synthetic: d_s and d_x must be >= 1");
  if (spec.per_class < 2) throw ConfigError("synthetic: per_class must be >= 2");
  if (!(spec.noise_sigma >= 0.0) || !std::isfinite(spec.noise_sigma))
    throw ConfigError("synthetic: noise_sigma must be finite and >= 0");

  const std::size_t n_classes = spec.n_seen + spec.n_unseen;
  const std::size_t min_hamming = (spec.d_s + 2) / 3;
  Rng attr_rng = Rng(spec.seed).fork(1);
  std::vector<std::vector<std::uint8_t>> codes;
  std::size_t rejections = 0;
  while (codes.size() < n_classes) {
    std::vector<std::uint8_t> c(spec.d_s);
    for (auto& b : c) b = static_cast<std::uint8_t>(attr_rng.next_u64() >> 63);
    bool ok = std::any_of(c.begin(), c.end(), [](auto b) { return b != 0; });
    for (const auto& other : codes) {
      if (!ok) break;
      std::size_t d = 0;
      for (std::size_t j = 0; j < spec.d_s; ++j) d += c[j] != other[j];
      ok = d >= min_hamming;
    }
    if (ok) {
      codes.push_back(std::move(c));
    } else if (++rejections > 100000) {
      throw ConfigError("synthetic: cannot place " + std::to_string(n_classes) + " binary attribute vectors of length " +
                        std::to_string(spec.d_s) + " at pairwise Hamming distance >= " + std::to_string(min_hamming));
    }
  }

  GzslDataset ds;
  ds.name = "synthetic";
  ds.attributes = Tensor<float>({n_classes, spec.d_s});
  for (std::size_t c = 0; c < n_classes; ++c)
    for (std::size_t j = 0; j < spec.d_s; ++j) ds.attributes(c, j) = codes[c][j];

  // x = A s with A [d_x x d_s], entries N(0, 1/d_s).
  Rng map_rng = Rng(spec.seed).fork(2);
  std::vector<double> a(spec.d_x * spec.d_s);
  const double a_scale = 1.0 / std::sqrt(static_cast<double>(spec.d_s));
  for (auto& v : a) v = a_scale * map_rng.normal();

  const std::size_t n = n_classes * spec.per_class;
  ds.features = Tensor<float>({n, spec.d_x});
  ds.labels.resize(n);
  Rng noise_rng = Rng(spec.seed).fork(3);
  Rng split_rng = Rng(spec.seed).fork(4);
  const std::size_t n_train = (spec.per_class * 4 + 4) / 5;
  for (std::size_t c = 0; c < n_classes; ++c) {
    std::vector<std::uint32_t> rows(spec.per_class);
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      const std::size_t r = c * spec.per_class + i;
      rows[i] = static_cast<std::uint32_t>(r);
      ds.labels[r] = static_cast<std::uint32_t>(c);
      for (std::size_t k = 0; k < spec.d_x; ++k) {
        double v = 0.0;
        for (std::size_t j = 0; j < spec.d_s; ++j) v += a[k * spec.d_s + j] * codes[c][j];
        ds.features(r, k) = static_cast<float>(v + spec.noise_sigma * noise_rng.normal());
      }
    }
    if (c < spec.n_seen) {
      ds.seen_classes.push_back(static_cast<std::uint32_t>(c));
      for (std::size_t i = rows.size(); i > 1; --i) std::swap(rows[i - 1], rows[split_rng.uniform_int(i)]);
      ds.train_seen.insert(ds.train_seen.end(), rows.begin(), rows.begin() + n_train);
      ds.test_seen.insert(ds.test_seen.end(), rows.begin() + n_train, rows.end());
    } else {
      ds.unseen_classes.push_back(static_cast<std::uint32_t>(c));
      ds.test_unseen.insert(ds.test_unseen.end(), rows.begin(), rows.end());
    }
  }
  std::sort(ds.train_seen.begin(), ds.train_seen.end());
  std::sort(ds.test_seen.begin(), ds.test_seen.end());
  ds.validate();
  return ds;
}

}  // namespace revcd
