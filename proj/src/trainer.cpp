#include "psrpn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "psrpn/dataset.hpp"
#include "psrpn/errors.hpp"
#include "psrpn/image.hpp"

namespace psrpn {

double lr_at(double base_lr, int epoch) { return base_lr * std::pow(10.0, -0.1 * epoch); }

std::vector<TrainSample> load_training_set(const Config& cfg, int offset, int count) {
  std::vector<TrainSample> out;
  if (cfg.dataset_kind == "synth") {
    Rng base(cfg.seed);
    const std::uint64_t data_seed = base.fork(kSeedData);
    for (int i = 0; i < count; ++i) {
      SynthSample s = synth_shapes(data_seed, offset + i, cfg.synth_size, cfg.synth_min_shapes,
                                   cfg.synth_max_shapes);
      out.push_back(TrainSample{normalize_image(std::move(s.image)), std::move(s.gts)});
    }
    return out;
  }

  DatasetIndex index;
  std::string dir;
  if (cfg.dataset_kind == "detection-json") {
    index = parse_detection_json(cfg.dataset_path);
    dir = std::filesystem::path(cfg.dataset_path).parent_path().string();
  } else {  // voc-dir
    for (const auto& entry : std::filesystem::directory_iterator(cfg.dataset_path))
      if (entry.path().extension() == ".xml") index.images.push_back(parse_voc_xml(entry.path()));
    std::sort(index.images.begin(), index.images.end(),
              [](const ImageAnnotation& a, const ImageAnnotation& b) { return a.id < b.id; });
    dir = cfg.dataset_path;
  }

  Rng base(cfg.seed);
  Rng crop_rng(base.fork(kSeedData));
  const int end = count < 0 ? static_cast<int>(index.images.size())
                            : std::min<int>(offset + count, index.images.size());
  for (int i = offset; i < end; ++i) {
    const ImageAnnotation& im = index.images[i];
    Tensor4f img = load_annotated_image(dir, im);
    std::vector<GtBox> gts = im.gts;
    TransformResult t;
    if (cfg.transform == "voc640")
      t = transform_voc640(img, gts);
    else if (cfg.transform == "coco768")
      t = transform_coco768(img, gts, crop_rng);
    else if (cfg.transform == "pad64")
      t = transform_test_pad(img, gts);
    else
      t = TransformResult{std::move(img), std::move(gts)};
    out.push_back(TrainSample{normalize_image(std::move(t.image)), std::move(t.gts)});
  }
  return out;
}

std::vector<EvalSample> load_eval_set(const Config& cfg, int offset, int count) {
  std::vector<EvalSample> out;
  if (cfg.dataset_kind == "synth") {
    Rng base(cfg.seed);
    const std::uint64_t data_seed = base.fork(kSeedData);
    for (int i = 0; i < count; ++i) {
      const int index = offset + i;
      SynthSample s = synth_shapes(data_seed, index, cfg.synth_size, cfg.synth_min_shapes,
                                   cfg.synth_max_shapes);
      out.push_back(EvalSample{std::to_string(index), normalize_image(std::move(s.image)),
                               std::move(s.gts)});
    }
    return out;
  }

  DatasetIndex index;
  std::string dir;
  if (cfg.dataset_kind == "detection-json") {
    index = parse_detection_json(cfg.dataset_path);
    dir = std::filesystem::path(cfg.dataset_path).parent_path().string();
  } else {  // voc-dir
    for (const auto& entry : std::filesystem::directory_iterator(cfg.dataset_path))
      if (entry.path().extension() == ".xml") index.images.push_back(parse_voc_xml(entry.path()));
    std::sort(index.images.begin(), index.images.end(),
              [](const ImageAnnotation& a, const ImageAnnotation& b) { return a.id < b.id; });
    dir = cfg.dataset_path;
  }

  const int end = count < 0 ? static_cast<int>(index.images.size())
                            : std::min<int>(offset + count, index.images.size());
  for (int i = offset; i < end; ++i) {
    const ImageAnnotation& im = index.images[i];
    Tensor4f img = load_annotated_image(dir, im);
    std::vector<GtBox> gts = im.gts;
    TransformResult t;
    if (cfg.transform == "voc640") {
      t = transform_voc640(img, gts);
    } else if (cfg.transform == "coco768") {
      const double s = 768.0 / std::min(img.h, img.w);
      const int nh = std::max(768, static_cast<int>(std::lround(img.h * s)));
      const int nw = std::max(768, static_cast<int>(std::lround(img.w * s)));
      Tensor4f resized = resize_bilinear(img, nh, nw);
      std::vector<GtBox> scaled = gts;
      for (GtBox& g : scaled)
        g.box = Box{g.box.x0 * s, g.box.y0 * s, g.box.x1 * s, g.box.y1 * s};
      t = transform_test_pad(resized, scaled);
    } else {
      t = transform_test_pad(img, gts);
    }
    out.push_back(EvalSample{im.id, normalize_image(std::move(t.image)), std::move(t.gts)});
  }
  return out;
}

Trainer::Trainer(Model<float>& model, const Config& cfg, std::vector<TrainSample> data)
    : model_(model), cfg_(cfg), data_(std::move(data)) {
  if (data_.empty()) throw ConfigError("trainer: empty training set");
  const int h = data_[0].image.h, w = data_[0].image.w;
  for (const TrainSample& s : data_)
    if (s.image.h != h || s.image.w != w)
      throw ConfigError("trainer: training images must share one size");

  const auto levels = pyramid_levels(h, w);
  anchors_ = cfg_.window_anchors
                 ? make_window_anchors(levels, default_window_profile(static_cast<int>(levels.size())))
                 : make_grid_anchors(levels, cfg_.grid_ratio_values, cfg_.grid_scale);

  std::vector<Box> boxes;
  boxes.reserve(anchors_.anchors.size());
  for (const Anchor& a : anchors_.anchors) boxes.push_back(a.box);
  assignments_.reserve(data_.size());
  for (const TrainSample& s : data_)
    assignments_.push_back(assign_anchors(boxes, s.gts, cfg_.iou_hi, cfg_.iou_lo));

  for (auto& [name, st] : model_.bn_sites) {
    (void)name;
    st->momentum = static_cast<float>(cfg_.bn_momentum);
    st->eps = static_cast<float>(cfg_.bn_eps);
  }

  momentum_.reserve(model_.ordered.size());
  for (const Parameter<float>* p : model_.ordered)
    momentum_.emplace_back(p->value.n, p->value.c, p->value.h, p->value.w);
}

LossValues<float> Trainer::train_image(int sample_idx, Rng& rng) {
  const TrainSample& s = data_[sample_idx];
  const AssignResult& assign = assignments_[sample_idx];
  const MiniBatch mb = sample_minibatch(assign, cfg_.anchors_per_image, rng);
  LossValues<float> image_loss;
  if (mb.anchor_ids.empty()) return image_loss;

  Graph<float> g(true);
  const auto maps = forward_model(g, model_, g.input(s.image));

  // group the sampled anchors per pyramid level
  const int n_levels = static_cast<int>(anchors_.levels.size());
  std::vector<std::vector<int>> by_level(n_levels);
  for (std::size_t i = 0; i < mb.anchor_ids.size(); ++i)
    by_level[anchors_.anchors[mb.anchor_ids[i]].level].push_back(static_cast<int>(i));

  Graph<float>::Id total = -1;
  for (int lvl = 0; lvl < n_levels; ++lvl) {
    if (by_level[lvl].empty()) continue;
    std::vector<PoolWindow> windows;
    std::vector<CellRef> cells;
    std::vector<std::array<float, 4>> targets;
    std::vector<int> labels;
    for (int i : by_level[lvl]) {
      const Anchor& a = anchors_.anchors[mb.anchor_ids[i]];
      if (cfg_.window_anchors)
        windows.push_back(window_of(a, anchors_));
      else
        cells.push_back(CellRef{a.shape, a.row, a.col});
      labels.push_back(mb.labels[i]);
      std::array<float, 4> t = {0, 0, 0, 0};
      if (mb.labels[i] > 0) {
        const int gt = assign.matched_gt[mb.anchor_ids[i]];
        const auto enc = encode_box(a.box, s.gts[gt].box);
        for (int c = 0; c < 4; ++c) t[c] = static_cast<float>(enc[c]);
      }
      targets.push_back(t);
    }
    const auto pooled = cfg_.window_anchors
                            ? g.ps_pool(maps.reg[lvl], maps.cls[lvl], windows, model_.cfg.ps_k)
                            : g.gather_cells(maps.reg[lvl], maps.cls[lvl], cells);
    LossValues<float> lv;
    const auto loss = g.rpn_loss(pooled, targets, labels, cfg_.anchors_per_image,
                                 cfg_.images_per_batch, &lv);
    image_loss.reg += lv.reg;
    image_loss.cls_pos += lv.cls_pos;
    image_loss.cls_neg += lv.cls_neg;
    image_loss.total += lv.total;
    total = total < 0 ? loss : g.add(total, loss);
  }
  if (total >= 0) {
    g.backward(total);
    g.apply_bn_updates();
  }
  return image_loss;
}

void Trainer::step(double lr) {
  const float mu = static_cast<float>(cfg_.momentum);
  const float wd = static_cast<float>(cfg_.weight_decay);
  const float lrf = static_cast<float>(lr);
  for (std::size_t pi = 0; pi < model_.ordered.size(); ++pi) {
    Parameter<float>& p = *model_.ordered[pi];
    p.ensure_grad();
    Tensor4f& m = momentum_[pi];
    const float decay = p.decay ? wd : 0.0f;
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      const float gval = p.grad.data[i] + decay * p.value.data[i];
      m.data[i] = mu * m.data[i] + gval;
      p.value.data[i] -= lrf * m.data[i];
    }
  }
}

TrainResult Trainer::run(const std::string& log_csv) {
  std::ofstream log;
  if (!log_csv.empty()) {
    // fresh = no data rows yet; leading comment lines do not count
    bool fresh = true;
    {
      std::ifstream in(log_csv);
      std::string line;
      while (std::getline(in, line))
        if (!line.empty() && line[0] != '#') {
          fresh = false;
          break;
        }
    }
    log.open(log_csv, std::ios::app);
    if (!log) throw IoError("trainer: cannot write " + log_csv);
    if (fresh) log << "epoch,lr,loss,reg,cls_pos,cls_neg\n";
  }

  Rng base(cfg_.seed);
  Rng rng(base.fork(kSeedTrain));
  TrainResult result;
  const int n = static_cast<int>(data_.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int e = 0; e < cfg_.epochs; ++e) {
    const double lr = lr_at(cfg_.base_lr, e);
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);

    EpochStats stats;
    stats.epoch = e;
    stats.lr = lr;
    const double norm = 1.0 / (static_cast<double>(cfg_.anchors_per_image) *
                               cfg_.images_per_batch);
    int batches = 0;
    for (int start = 0; start < n; start += cfg_.images_per_batch) {
      model_.zero_grads();
      const int stop = std::min(n, start + cfg_.images_per_batch);
      for (int i = start; i < stop; ++i) {
        const LossValues<float> lv = train_image(order[i], rng);
        stats.mean_loss += lv.total;
        stats.mean_reg += lv.reg * norm;
        stats.mean_cls_pos += lv.cls_pos * norm;
        stats.mean_cls_neg += lv.cls_neg * norm;
      }
      step(lr);
      ++batches;
    }
    stats.mean_loss /= std::max(1, batches);
    stats.mean_reg /= std::max(1, batches);
    stats.mean_cls_pos /= std::max(1, batches);
    stats.mean_cls_neg /= std::max(1, batches);
    result.epochs.push_back(stats);
    if (log)
      log << e << "," << lr << "," << stats.mean_loss << "," << stats.mean_reg << ","
          << stats.mean_cls_pos << "," << stats.mean_cls_neg << std::endl;
  }
  return result;
}

}  // namespace psrpn
