#include "partseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace partseg {

namespace fs = std::filesystem;

namespace {

void write_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write file: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write: " + path);
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// netpbm header: magic, then whitespace-separated ints with '#' comments
struct PnmHeader {
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  std::size_t data_offset = 0;
};

PnmHeader parse_pnm_header(const std::string& bytes, const std::string& path) {
  PnmHeader hd;
  std::size_t pos = 0;
  auto skip_space = [&]() {
    while (pos < bytes.size()) {
      char c = bytes[pos];
      if (c == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() {
    skip_space();
    std::size_t start = pos;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') ++pos;
    if (start == pos) throw ParseError("bad netpbm header in " + path);
    return std::stoi(bytes.substr(start, pos - start));
  };
  if (bytes.size() < 2) throw ParseError("truncated netpbm file: " + path);
  hd.magic = bytes.substr(0, 2);
  pos = 2;
  hd.w = read_int();
  hd.h = read_int();
  hd.maxval = read_int();
  if (pos >= bytes.size()) throw ParseError("truncated netpbm header: " + path);
  ++pos;  // single whitespace byte before binary data
  hd.data_offset = pos;
  return hd;
}

}  // namespace

void write_ppm(const std::string& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 3)
    throw ShapeMismatch("write_ppm expects [H,W,3], got " + image.shape_str());
  int h = image.dim(0), w = image.dim(1);
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + static_cast<std::size_t>(h) * w * 3);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int c = 0; c < 3; ++c) {
        double v = std::clamp(image.at(i, j, c), 0.0, 1.0);
        out.push_back(static_cast<char>(static_cast<int>(std::lround(v * 255.0))));
      }
  write_bytes(path, out);
}

Tensor read_ppm(const std::string& path) {
  std::string bytes = read_bytes(path);
  PnmHeader hd = parse_pnm_header(bytes, path);
  if (hd.magic != "P6") throw ParseError("expected P6 ppm in " + path + ", got " + hd.magic);
  if (hd.maxval != 255) throw ParseError("expected maxval 255 in " + path);
  std::size_t need = static_cast<std::size_t>(hd.w) * hd.h * 3;
  if (bytes.size() - hd.data_offset < need) throw ParseError("truncated ppm data: " + path);
  Tensor img({hd.h, hd.w, 3});
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + hd.data_offset);
  for (std::int64_t i = 0; i < img.size(); ++i) img[i] = p[i] / 255.0;
  return img;
}

void write_label_pgm(const std::string& path, const LabelGrid& label) {
  std::string out =
      "P5\n" + std::to_string(label.w) + " " + std::to_string(label.h) + "\n65535\n";
  out.reserve(out.size() + static_cast<std::size_t>(label.size()) * 2);
  for (std::int32_t v : label.v) {
    if (v < 0 || v > 65534) throw LabelOutOfRange("label value out of 16-bit range");
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
    out.push_back(static_cast<char>(v & 0xFF));
  }
  write_bytes(path, out);
}

LabelGrid read_label_pgm(const std::string& path) {
  std::string bytes = read_bytes(path);
  PnmHeader hd = parse_pnm_header(bytes, path);
  if (hd.magic != "P5") throw ParseError("expected P5 pgm in " + path + ", got " + hd.magic);
  if (hd.maxval != 65535) throw ParseError("expected 16-bit pgm (maxval 65535) in " + path);
  std::size_t need = static_cast<std::size_t>(hd.w) * hd.h * 2;
  if (bytes.size() - hd.data_offset < need) throw ParseError("truncated pgm data: " + path);
  LabelGrid g(hd.h, hd.w);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + hd.data_offset);
  for (std::size_t i = 0; i < g.v.size(); ++i)
    g.v[i] = static_cast<std::int32_t>((p[2 * i] << 8) | p[2 * i + 1]);
  return g;
}

std::vector<SampleRef> load_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw MissingFile("cannot open manifest: " + manifest_path);
  fs::path base = fs::path(manifest_path).parent_path();
  std::vector<SampleRef> refs;
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw ParseError("manifest row " + std::to_string(row) + " lacks a tab separator");
    SampleRef ref;
    ref.image_path = (base / line.substr(0, tab)).string();
    ref.label_path = (base / line.substr(tab + 1)).string();
    ref.id = fs::path(line.substr(0, tab)).stem().string();
    ref.row = row;
    refs.push_back(std::move(ref));
  }
  return refs;
}

Sample load_sample(const SampleRef& ref, const Taxonomy& tax) {
  if (!fs::exists(ref.image_path))
    throw MissingFile("manifest row " + std::to_string(ref.row) +
                      ": missing image " + ref.image_path);
  if (!fs::exists(ref.label_path))
    throw MissingFile("manifest row " + std::to_string(ref.row) +
                      ": missing label " + ref.label_path);
  Sample s;
  s.id = ref.id;
  s.image = read_ppm(ref.image_path);
  s.label = read_label_pgm(ref.label_path);
  if (s.label.h != s.image.dim(0) || s.label.w != s.image.dim(1))
    throw ShapeMismatch("sample " + ref.id + ": image/label size mismatch");
  s.object_label = LabelGrid(s.label.h, s.label.w);
  for (std::size_t i = 0; i < s.label.v.size(); ++i) {
    std::int32_t v = s.label.v[i];
    if (v < 0 || v > tax.n_pairs())
      throw BadLabelRange("sample " + ref.id + ": label value " + std::to_string(v) +
                          " exceeds taxonomy size " + std::to_string(tax.n_pairs()));
    s.object_label.v[i] = v == 0 ? 0 : tax.pair_object(v - 1) + 1;
  }
  return s;
}

std::vector<Sample> load_split(const std::string& split_dir, const Taxonomy& tax) {
  auto refs = load_manifest((fs::path(split_dir) / "manifest.tsv").string());
  std::vector<Sample> out;
  out.reserve(refs.size());
  for (const auto& r : refs) out.push_back(load_sample(r, tax));
  return out;
}

void SynthConfig::validate() const {
  if (image_size < 32) throw ConfigError("synth.image_size", "synth.image_size must be >= 32");
  if (train_samples < 1 || val_samples < 1)
    throw ConfigError("synth.train_samples", "synth sample counts must be >= 1");
  if (!(small_part_ratio > 0.0 && small_part_ratio <= 0.2))
    throw ConfigError("synth.small_part_ratio", "synth.small_part_ratio must lie in (0, 0.2]");
  if (objects.empty()) throw ConfigError("synth.objects", "need at least one object");
  if (parts.size() != 3)
    throw ConfigError("synth.parts", "generator draws exactly 3 parts (top band, body, dot)");
  for (const auto& lists : {objects, parts, unseen})
    for (const auto& n : lists)
      if (n.empty() || n.find("'s ") != std::string::npos || n.find('\t') != std::string::npos ||
          n.find('\n') != std::string::npos)
        throw ConfigError("synth.objects", "bad name \"" + n + "\" in synth config");
  int seen = 0;
  for (const auto& o : objects)
    if (std::find(unseen.begin(), unseen.end(), o) == unseen.end()) ++seen;
  if (seen == 0) throw ConfigError("synth.unseen", "at least one object must stay seen");
  for (const auto& u : unseen)
    if (std::find(objects.begin(), objects.end(), u) == objects.end())
      throw ConfigError("synth.unseen", "unseen object \"" + u + "\" not in object list");
}

Taxonomy synth_taxonomy(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<std::string> names;
  for (const auto& o : cfg.objects)
    for (const auto& p : cfg.parts) names.push_back(o + "'s " + p);
  return build_taxonomy(names, cfg.unseen);
}

namespace {

struct Palette {
  double base[3];
};

constexpr Palette kPalette[6] = {
    {{0.22, 0.38, 0.85}}, {{0.88, 0.52, 0.12}}, {{0.18, 0.72, 0.32}},
    {{0.62, 0.25, 0.78}}, {{0.10, 0.70, 0.75}}, {{0.85, 0.78, 0.15}}};
constexpr double kShapeExp[6] = {2.0, 4.0, 1.3, 3.0, 1.6, 5.0};
constexpr double kDotColor[3] = {0.85, 0.08, 0.10};

struct SynthSample {
  Tensor image;
  LabelGrid label;
};

// One object per image: a superellipse split into a top cap band, a small
// dot disc, and the remaining body.
SynthSample draw_sample(const SynthConfig& cfg, int obj_idx, const Taxonomy& tax, Rng& rng) {
  int s = cfg.image_size;
  SynthSample out;
  out.image = Tensor({s, s, 3});
  out.label = LabelGrid(s, s);

  double p = kShapeExp[static_cast<std::size_t>(obj_idx % 6)];
  const Palette& pal = kPalette[static_cast<std::size_t>(obj_idx % 6)];
  double a = rng.uniform(0.20, 0.30) * s;
  double b = rng.uniform(0.17, 0.27) * s;
  double cx = rng.uniform(a + 1.0, s - a - 2.0);
  double cy = rng.uniform(b + 1.0, s - b - 2.0);
  double brightness = rng.uniform(0.92, 1.08);

  auto inside = [&](int i, int j) {
    double dx = std::abs((j - cx) / a), dy = std::abs((i - cy) / b);
    return std::pow(dx, p) + std::pow(dy, p) <= 1.0;
  };

  // first pass: object extent
  std::vector<std::pair<int, int>> obj_px;
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j)
      if (inside(i, j)) obj_px.emplace_back(i, j);

  double dot_cx = cx + 0.15 * a, dot_cy = cy + 0.35 * b;
  auto dot_count = [&](int r) {
    int n = 0;
    for (auto [i, j] : obj_px) {
      if (i - cy <= -0.4 * b) continue;  // cap region excluded
      double dx = j - dot_cx, dy = i - dot_cy;
      if (dx * dx + dy * dy <= static_cast<double>(r) * r) ++n;
    }
    return n;
  };
  int budget = static_cast<int>(std::floor(cfg.small_part_ratio * static_cast<double>(obj_px.size())));
  int r = std::max(1, static_cast<int>(std::floor(
                          std::sqrt(static_cast<double>(budget) / 3.14159265358979))));
  while (r > 1 && dot_count(r) > budget) --r;

  int pair_base = -1;  // object's first pair id in taxonomy order
  for (int c = 0; c < tax.n_pairs(); ++c)
    if (tax.pair_object(c) == obj_idx) {
      pair_base = c;
      break;
    }
  if (pair_base < 0) throw Error("synthetic generator: object missing from taxonomy");

  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j) {
      double col[3] = {0.12, 0.12, 0.12};
      int part = -1;  // 0 cap, 1 body, 2 dot
      if (inside(i, j)) {
        if (i - cy <= -0.4 * b) {
          part = 0;
        } else {
          double dx = j - dot_cx, dy = i - dot_cy;
          part = (dx * dx + dy * dy <= static_cast<double>(r) * r) ? 2 : 1;
        }
        if (part == 0)
          for (int c = 0; c < 3; ++c) col[c] = 0.5 * pal.base[c] + 0.5;
        else if (part == 1)
          for (int c = 0; c < 3; ++c) col[c] = pal.base[c];
        else
          for (int c = 0; c < 3; ++c) col[c] = kDotColor[c];
        for (double& c : col) c *= brightness;
        out.label.at(i, j) = pair_base + part + 1;
      }
      for (int c = 0; c < 3; ++c)
        out.image.at(i, j, c) = std::clamp(col[c] + rng.uniform(-0.02, 0.02), 0.0, 1.0);
    }
  return out;
}

}  // namespace

void generate_synthetic(const SynthConfig& cfg, const std::string& root) {
  cfg.validate();
  Taxonomy tax = synth_taxonomy(cfg);
  fs::create_directories(root);
  save_taxonomy(tax, (fs::path(root) / "taxonomy.json").string());

  std::vector<int> seen_objs, all_objs;
  for (int o = 0; o < tax.n_objects(); ++o) {
    all_objs.push_back(o);
    if (!tax.object_is_unseen(o)) seen_objs.push_back(o);
  }

  for (const std::string split : {"train", "val"}) {
    bool is_train = split == "train";
    int count = is_train ? cfg.train_samples : cfg.val_samples;
    const auto& pool = is_train ? seen_objs : all_objs;
    fs::path dir = fs::path(root) / split;
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "labels");
    Rng rng(fnv1a64(split) ^ cfg.seed);
    std::string manifest;
    for (int i = 0; i < count; ++i) {
      int obj = pool[static_cast<std::size_t>(i) % pool.size()];
      SynthSample smp = draw_sample(cfg, obj, tax, rng);
      char id[32];
      std::snprintf(id, sizeof(id), "%s_%05d", split.c_str(), i);
      write_ppm((dir / "images" / (std::string(id) + ".ppm")).string(), smp.image);
      write_label_pgm((dir / "labels" / (std::string(id) + ".pgm")).string(), smp.label);
      manifest += "images/" + std::string(id) + ".ppm\tlabels/" + std::string(id) + ".pgm\n";
    }
    write_bytes((dir / "manifest.tsv").string(), manifest);
  }
}

LabelGrid pred_all_decode(const DecoderOutput& out) {
  if (out.logits.empty()) throw IncompleteBundle("pred_all_decode: no logits");
  const Tensor& first = out.logits[0].value();
  int h = first.dim(0), w = first.dim(1);
  LabelGrid pred(h, w);
  int unc = out.pair_uncategory();
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      int best = 0;
      double best_v = out.logits[static_cast<std::size_t>(out.pair_channel(0))].value().at(i, j);
      for (int c = 1; c <= out.n_pairs; ++c) {  // pairs then uncategory, in index order
        int ch = c < out.n_pairs ? out.pair_channel(c) : unc;
        double v = out.logits[static_cast<std::size_t>(ch)].value().at(i, j);
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      pred.at(i, j) = best == out.n_pairs ? 0 : best + 1;
    }
  return pred;
}

LabelGrid oracle_obj_restrict(const DecoderOutput& out, const Tensor& gt_object_mask,
                              int gt_object, const Taxonomy& tax) {
  if (gt_object < 0 || gt_object >= tax.n_objects())
    throw UnknownObject("oracle restrict: object index " + std::to_string(gt_object));
  if (out.n_pairs != tax.n_pairs())
    throw ChannelMismatch("oracle restrict: decoder channels do not match taxonomy");
  const Tensor& first = out.logits[0].value();
  if (gt_object_mask.rank() != 2 || gt_object_mask.dim(0) != first.dim(0) ||
      gt_object_mask.dim(1) != first.dim(1))
    throw ShapeMismatch("oracle restrict: mask shape " + gt_object_mask.shape_str());
  std::vector<int> channels = tax.pairs_of_object(gt_object);
  if (channels.empty()) throw UnknownObject("oracle restrict: object has no parts");
  int h = first.dim(0), w = first.dim(1);
  LabelGrid pred(h, w);
  bool any = false;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      if (gt_object_mask.at(i, j) <= 0.5) continue;
      any = true;
      int best = channels[0];
      double best_v =
          out.logits[static_cast<std::size_t>(out.pair_channel(channels[0]))].value().at(i, j);
      for (std::size_t k = 1; k < channels.size(); ++k) {
        double v =
            out.logits[static_cast<std::size_t>(out.pair_channel(channels[k]))].value().at(i, j);
        if (v > best_v) {
          best_v = v;
          best = channels[k];
        }
      }
      pred.at(i, j) = best + 1;
    }
  if (!any) throw EmptyMask("oracle restrict: object mask selects no pixels");
  return pred;
}

LabelGrid oracle_obj_compose(const DecoderOutput& out, const LabelGrid& object_label,
                             const Taxonomy& tax) {
  const Tensor& first = out.logits.at(0).value();
  if (object_label.h != first.dim(0) || object_label.w != first.dim(1))
    throw ShapeMismatch("oracle compose: object label shape mismatch");
  LabelGrid pred(object_label.h, object_label.w);
  for (int o = 0; o < tax.n_objects(); ++o) {
    Tensor mask({object_label.h, object_label.w});
    bool any = false;
    for (int i = 0; i < object_label.h; ++i)
      for (int j = 0; j < object_label.w; ++j)
        if (object_label.at(i, j) == o + 1) {
          mask.at(i, j) = 1.0;
          any = true;
        }
    if (!any) continue;
    LabelGrid part = oracle_obj_restrict(out, mask, o, tax);
    for (std::size_t i = 0; i < pred.v.size(); ++i)
      if (part.v[i] != 0) pred.v[i] = part.v[i];
  }
  return pred;
}

}  // namespace partseg
