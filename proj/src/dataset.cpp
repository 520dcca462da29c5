#include "psrpn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "psrpn/errors.hpp"
#include "psrpn/image.hpp"
#include "psrpn/pft.hpp"

namespace psrpn {

namespace {

using nlohmann::json;

const json& need(const json& j, const char* key, const std::string& path) {
  auto it = j.find(key);
  if (it == j.end()) throw ParseError(path + ": missing key '" + key + "'");
  return *it;
}

}  // namespace

DatasetIndex parse_detection_json(const std::string& path, long* warn_count) {
  std::ifstream in(path);
  if (!in) throw IoError("parse_detection_json: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }

  struct Row {
    long id;
    ImageAnnotation anno;
  };
  std::vector<Row> rows;
  for (const json& im : need(j, "images", path)) {
    Row r;
    r.id = need(im, "id", path).get<long>();
    r.anno.id = std::to_string(r.id);
    r.anno.file = need(im, "file_name", path).get<std::string>();
    r.anno.width = need(im, "width", path).get<int>();
    r.anno.height = need(im, "height", path).get<int>();
    if (r.anno.width < 1 || r.anno.height < 1)
      throw ParseError(path + ": bad size for image " + r.anno.id);
    rows.push_back(std::move(r));
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.id < b.id; });
  std::map<long, std::size_t> by_id;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (!by_id.emplace(rows[i].id, i).second)
      throw ParseError(path + ": duplicate image id " + std::to_string(rows[i].id));

  for (const json& an : need(j, "annotations", path)) {
    const long img_id = need(an, "image_id", path).get<long>();
    const json& bbox = need(an, "bbox", path);
    if (!bbox.is_array() || bbox.size() != 4)
      throw ParseError(path + ": bbox must be [x,y,w,h]");
    const double x = bbox[0].get<double>(), y = bbox[1].get<double>();
    const double w = bbox[2].get<double>(), h = bbox[3].get<double>();
    if (w <= 0 || h <= 0) {
      if (warn_count) ++*warn_count;
      continue;
    }
    GtBox gt;
    gt.box = Box{x, y, x + w, y + h};
    gt.ignore = an.value("iscrowd", 0) != 0;
    auto it = by_id.find(img_id);
    if (it == by_id.end())
      throw ParseError(path + ": annotation references unknown image " + std::to_string(img_id));
    rows[it->second].anno.gts.push_back(gt);
  }
  DatasetIndex index;
  for (Row& r : rows) index.images.push_back(std::move(r.anno));
  return index;
}

std::string emit_detection_json(const DatasetIndex& index) {
  json j;
  j["images"] = json::array();
  j["annotations"] = json::array();
  j["categories"] = json::array({{{"id", 1}, {"name", "object"}}});
  long next_ann = 1;
  for (const ImageAnnotation& a : index.images) {
    j["images"].push_back({{"id", std::stol(a.id)},
                           {"file_name", a.file},
                           {"width", a.width},
                           {"height", a.height}});
    for (const GtBox& g : a.gts) {
      j["annotations"].push_back({{"id", next_ann++},
                                  {"image_id", std::stol(a.id)},
                                  {"category_id", 1},
                                  {"bbox", {g.box.x0, g.box.y0, g.box.w(), g.box.h()}},
                                  {"area", g.box.area()},
                                  {"iscrowd", g.ignore ? 1 : 0}});
    }
  }
  return j.dump(2);
}

namespace {

// Minimal scanner for the annotation xml dialect: matched plain tags, no
// attributes on anything we read, no namespaces.
struct XmlCursor {
  const std::string& text;
  const std::string& path;

  // the span between <tag> and </tag>, searched from *pos; advances *pos
  // past the close tag; returns false when the tag does not occur again
  bool block(const std::string& tag, std::size_t* pos, std::size_t* begin,
             std::size_t* end) const {
    const std::string open = "<" + tag + ">";
    const std::string close = "</" + tag + ">";
    const std::size_t o = text.find(open, *pos);
    if (o == std::string::npos) return false;
    const std::size_t c = text.find(close, o + open.size());
    if (c == std::string::npos)
      throw ParseError(path + ": unterminated <" + tag + ">");
    *begin = o + open.size();
    *end = c;
    *pos = c + close.size();
    return true;
  }

  std::string leaf(const std::string& tag, std::size_t from, std::size_t to) const {
    std::size_t pos = from, b = 0, e = 0;
    if (!block(tag, &pos, &b, &e) || b > to)
      throw ParseError(path + ": missing <" + tag + ">");
    std::string s = text.substr(b, e - b);
    const auto l = s.find_first_not_of(" \t\r\n");
    const auto r = s.find_last_not_of(" \t\r\n");
    return l == std::string::npos ? "" : s.substr(l, r - l + 1);
  }

  int leaf_int(const std::string& tag, std::size_t from, std::size_t to) const {
    const std::string s = leaf(tag, from, to);
    try {
      std::size_t used = 0;
      const int v = std::stoi(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ParseError(path + ": <" + tag + "> is not an integer: '" + s + "'");
    }
  }
};

}  // namespace

ImageAnnotation parse_voc_xml(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("parse_voc_xml: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  XmlCursor xml{text, path};

  std::size_t pos = 0, ab = 0, ae = 0;
  if (!xml.block("annotation", &pos, &ab, &ae))
    throw ParseError(path + ": missing <annotation>");

  ImageAnnotation out;
  out.id = std::filesystem::path(path).stem().string();
  out.file = out.id + ".pft";
  {
    std::size_t p = ab, sb = 0, se = 0;
    if (!xml.block("size", &p, &sb, &se) || sb > ae)
      throw ParseError(path + ": missing <size>");
    out.width = xml.leaf_int("width", sb, se);
    out.height = xml.leaf_int("height", sb, se);
    if (out.width < 1 || out.height < 1) throw ParseError(path + ": bad <size>");
  }

  std::size_t p = ab;
  std::size_t ob = 0, oe = 0;
  while (xml.block("object", &p, &ob, &oe) && ob < ae) {
    std::size_t q = ob, bb = 0, be = 0;
    if (!xml.block("bndbox", &q, &bb, &be) || bb > oe)
      throw ParseError(path + ": object without <bndbox>");
    const int xmin = xml.leaf_int("xmin", bb, be);
    const int ymin = xml.leaf_int("ymin", bb, be);
    const int xmax = xml.leaf_int("xmax", bb, be);
    const int ymax = xml.leaf_int("ymax", bb, be);
    if (xmax < xmin || ymax < ymin)
      throw ParseError(path + ": inverted <bndbox>");
    GtBox gt;
    // corners are 1-based and inclusive
    gt.box = Box{static_cast<double>(xmin - 1), static_cast<double>(ymin - 1),
                 static_cast<double>(xmax), static_cast<double>(ymax)};
    bool difficult = false;
    std::size_t dq = ob, db = 0, de = 0;
    XmlCursor inner{text, path};
    if (inner.block("difficult", &dq, &db, &de) && db < oe)
      difficult = text.substr(db, de - db).find('1') != std::string::npos;
    gt.ignore = difficult;
    out.gts.push_back(gt);
  }
  return out;
}

namespace {

std::vector<GtBox> scale_gts(const std::vector<GtBox>& gts, double s) {
  std::vector<GtBox> out = gts;
  for (GtBox& g : out) g.box = Box{g.box.x0 * s, g.box.y0 * s, g.box.x1 * s, g.box.y1 * s};
  return out;
}

}  // namespace

TransformResult transform_voc640(const Tensor4f& img, const std::vector<GtBox>& gts) {
  const double s = 640.0 / std::max(img.h, img.w);
  const int nh = std::max(1, static_cast<int>(std::lround(img.h * s)));
  const int nw = std::max(1, static_cast<int>(std::lround(img.w * s)));
  TransformResult out;
  out.image = pad_to(resize_bilinear(img, nh, nw), 640, 640);
  out.gts = scale_gts(gts, s);
  for (GtBox& g : out.gts) g.box = clip_box(g.box, nw, nh);
  std::erase_if(out.gts, [](const GtBox& g) { return !g.box.valid(); });
  return out;
}

TransformResult transform_coco768(const Tensor4f& img, const std::vector<GtBox>& gts, Rng& rng) {
  const double s = 768.0 / std::min(img.h, img.w);
  const int nh = std::max(768, static_cast<int>(std::lround(img.h * s)));
  const int nw = std::max(768, static_cast<int>(std::lround(img.w * s)));
  Tensor4f resized = resize_bilinear(img, nh, nw);
  const int oy = nh > 768 ? rng.uniform_int(0, nh - 768) : 0;
  const int ox = nw > 768 ? rng.uniform_int(0, nw - 768) : 0;
  TransformResult out;
  out.image = crop_image(resized, oy, ox, 768, 768);
  out.gts = scale_gts(gts, s);
  for (GtBox& g : out.gts) {
    g.box = Box{g.box.x0 - ox, g.box.y0 - oy, g.box.x1 - ox, g.box.y1 - oy};
    g.box = clip_box(g.box, 768, 768);
  }
  std::erase_if(out.gts, [](const GtBox& g) { return !g.box.valid(); });
  return out;
}

TransformResult transform_test_pad(const Tensor4f& img, const std::vector<GtBox>& gts) {
  TransformResult out;
  out.image = pad_to(img, next_multiple(img.h, 64), next_multiple(img.w, 64));
  out.gts = gts;
  return out;
}

SynthSample synth_shapes(std::uint64_t seed, int index, int size, int min_shapes,
                         int max_shapes) {
  if (size < 64 || size % 64 != 0)
    throw ConfigError("synth_shapes: size must be a positive multiple of 64");
  if (min_shapes < 1 || max_shapes < min_shapes)
    throw ConfigError("synth_shapes: bad shape count range");
  Rng base(seed);
  Rng rng(base.fork(static_cast<std::uint64_t>(index) + 1));

  SynthSample out;
  out.image = Tensor4f(1, 3, size, size);
  float bg[3];
  for (int c = 0; c < 3; ++c) bg[c] = static_cast<float>(rng.uniform(0.2, 0.8));
  const double gx = rng.uniform(-0.1, 0.1), gy = rng.uniform(-0.1, 0.1);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < size; ++y) {
      float* row = out.image.row(0, c, y);
      for (int x = 0; x < size; ++x) {
        const double v = bg[c] + gx * (static_cast<double>(x) / size - 0.5) +
                         gy * (static_cast<double>(y) / size - 0.5) + rng.normal(0.0, 0.05);
        row[x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }

  const int count = rng.uniform_int(min_shapes, max_shapes);
  // Side ranges chosen per size class so every evaluation stratum stays
  // populated: two sides in one class always land the box area in the
  // matching area bucket. Placement is rejection-sampled so no box is
  // buried under a later one; big shapes go first since they are the
  // hardest to fit, and a shape that cannot fit is dropped.
  const int cap = std::min(120, size - 8);
  const int classes = cap >= 97 ? 3 : (cap >= 32 ? 2 : 1);
  std::vector<int> order(count);
  for (int s = 0; s < count; ++s) {
    const int u = rng.uniform_int(0, 99);
    order[s] = std::min(classes - 1, u < 30 ? 0 : (u < 80 ? 1 : 2));
  }
  std::sort(order.begin(), order.end(), std::greater<int>());
  for (const int cls : order) {
    const int side_lo = cls == 0 ? 14 : (cls == 1 ? 32 : 97);
    const int side_hi = cls == 0 ? std::min(cap, 31) : (cls == 1 ? std::min(cap, 90) : cap);
    const double lo = std::log(static_cast<double>(side_lo));
    const double hi = std::log(static_cast<double>(side_hi));
    int w = 0, h = 0, x0 = 0, y0 = 0;
    bool placed = false;
    for (int attempt = 0; attempt < 40 && !placed; ++attempt) {
      w = std::clamp(static_cast<int>(std::lround(std::exp(rng.uniform(lo, hi)))), side_lo,
                     side_hi);
      const double hlo = std::log(std::max<double>(side_lo, w / 2.0));
      const double hhi = std::log(std::min<double>(side_hi, w * 2.0));
      h = std::clamp(static_cast<int>(std::lround(std::exp(rng.uniform(hlo, hhi)))), side_lo,
                     side_hi);
      x0 = rng.uniform_int(0, size - w);
      y0 = rng.uniform_int(0, size - h);
      const Box cand{static_cast<double>(x0), static_cast<double>(y0),
                     static_cast<double>(x0 + w), static_cast<double>(y0 + h)};
      placed = true;
      for (const GtBox& prev : out.gts) {
        const double ix = std::max(0.0, std::min(cand.x1, prev.box.x1) -
                                            std::max(cand.x0, prev.box.x0));
        const double iy = std::max(0.0, std::min(cand.y1, prev.box.y1) -
                                            std::max(cand.y0, prev.box.y0));
        const double inter = ix * iy;
        const double pa = (prev.box.x1 - prev.box.x0) * (prev.box.y1 - prev.box.y0);
        if (iou(cand, prev.box) > 0.25 || inter > 0.4 * pa ||
            inter > 0.4 * (double(w) * double(h))) {
          placed = false;
          break;
        }
      }
    }
    if (!placed) continue;
    const bool ellipse = rng.uniform() < 0.5;
    float color[3];
    for (int c = 0; c < 3; ++c) {
      const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      color[c] = static_cast<float>(std::clamp(bg[c] + sign * rng.uniform(0.2, 0.6), 0.0, 1.0));
    }
    const double cx = x0 + w / 2.0, cy = y0 + h / 2.0;
    const double rx = w / 2.0, ry = h / 2.0;
    for (int y = y0; y < y0 + h; ++y)
      for (int x = x0; x < x0 + w; ++x) {
        if (ellipse) {
          const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
          if (dx * dx + dy * dy > 1.0) continue;
        }
        for (int c = 0; c < 3; ++c) out.image.at(0, c, y, x) = color[c];
      }
    GtBox gt;
    gt.box = Box{static_cast<double>(x0), static_cast<double>(y0),
                 static_cast<double>(x0 + w), static_cast<double>(y0 + h)};
    out.gts.push_back(gt);
  }
  return out;
}

void materialize_synth(const std::string& dir, std::uint64_t seed, int count, int size,
                       int min_shapes, int max_shapes) {
  std::error_code ec;
  std::filesystem::create_directories(dir + "/images", ec);
  if (ec) throw IoError("materialize_synth: cannot create " + dir + ": " + ec.message());
  DatasetIndex index;
  for (int i = 0; i < count; ++i) {
    SynthSample s = synth_shapes(seed, i, size, min_shapes, max_shapes);
    char name[32];
    std::snprintf(name, sizeof name, "images/img_%05d.pft", i);
    save_pft(dir + "/" + name, s.image, 3);
    ImageAnnotation a;
    a.id = std::to_string(i + 1);
    a.file = name;
    a.width = size;
    a.height = size;
    a.gts = std::move(s.gts);
    index.images.push_back(std::move(a));
  }
  std::ofstream out(dir + "/annotations.json");
  if (!out) throw IoError("materialize_synth: cannot write annotations in " + dir);
  out << emit_detection_json(index) << "\n";
}

Tensor4f load_annotated_image(const std::string& anno_dir, const ImageAnnotation& im) {
  const std::string path =
      anno_dir.empty() ? im.file : (std::filesystem::path(anno_dir) / im.file).string();
  Tensor4f img = load_pft(path);
  if (img.n != 1 || img.c != 3 || img.h != im.height || img.w != im.width)
    throw IoError("load_annotated_image: " + path + " is " + img.shape_str() + ", annotation says " +
                  std::to_string(im.height) + "x" + std::to_string(im.width));
  return img;
}

}  // namespace psrpn
