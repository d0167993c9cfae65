// SPDX-License-Identifier: Apache-2.0
//
// Stage orchestration: joint 3D+2D field training (initial and fusion),
// refinement data preparation and training, rendering commands, full
// three-stage reconstruction, and metric evaluation.

#pragma once

#include <cmath>
#include <filesystem>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "occufield/config.hpp"
#include "occufield/dataset.hpp"
#include "occufield/fieldnet.hpp"
#include "occufield/losses.hpp"
#include "occufield/meshing.hpp"
#include "occufield/optim.hpp"
#include "occufield/refine.hpp"
#include "occufield/renderer.hpp"

namespace occufield {

// ---------------------------------------------------------------------------
// Stage configuration
// ---------------------------------------------------------------------------

struct StageConfig {
  bool fusion = false;
  int iters = 5000;
  int batch = 2;
  int points_occ = 256;
  int points_color = 256;
  int rays = 64;
  int n_coarse = 24;
  int n_fine = 24;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double sigma = 0.05;
  bool use_vol = true;
  uint64_t seed = 7;
  int ckpt_every = 1000;
  int log_every = 25;
  int holdout_view = 3;
  FieldBundleConfig bundle;
  std::string out_dir;
  std::string resume;

  // The published training regime; desk values everywhere else.
  void apply_paper_preset() {
    iters = 200000;
    batch = fusion ? 2 : 3;
    points_occ = 5000;
    points_color = 5000;
    rays = 1000;
    lr = 2e-4;
    bundle.mlp_widths = {1024, 512, 256, 128};
  }
};

inline StageConfig stage_config_from(const ConfigFile& cfg, const std::string& section,
                                     bool fusion) {
  StageConfig sc;
  sc.fusion = fusion;
  sc.bundle.fusion = fusion;
  if (cfg.get("" + section, "preset", "desk") == "paper") sc.apply_paper_preset();
  sc.iters = static_cast<int>(cfg.get_int(section, "iters", sc.iters));
  sc.batch = static_cast<int>(cfg.get_int(section, "batch", sc.batch));
  sc.points_occ = static_cast<int>(cfg.get_int(section, "points_occ", sc.points_occ));
  sc.points_color = static_cast<int>(cfg.get_int(section, "points_color", sc.points_color));
  sc.rays = static_cast<int>(cfg.get_int(section, "rays", sc.rays));
  sc.n_coarse = static_cast<int>(cfg.get_int(section, "n_coarse", sc.n_coarse));
  sc.n_fine = static_cast<int>(cfg.get_int(section, "n_fine", sc.n_fine));
  sc.lr = cfg.get_double(section, "lr", sc.lr);
  sc.beta1 = cfg.get_double(section, "beta1", sc.beta1);
  sc.beta2 = cfg.get_double(section, "beta2", sc.beta2);
  sc.sigma = cfg.get_double(section, "sigma", sc.sigma);
  sc.use_vol = cfg.get_bool(section, "use_vol", sc.use_vol);
  sc.seed = static_cast<uint64_t>(cfg.get_int(section, "seed", static_cast<int64_t>(sc.seed)));
  sc.ckpt_every = static_cast<int>(cfg.get_int(section, "ckpt_every", sc.ckpt_every));
  sc.log_every = static_cast<int>(cfg.get_int(section, "log_every", sc.log_every));
  sc.holdout_view = static_cast<int>(cfg.get_int(section, "holdout_view", sc.holdout_view));
  sc.bundle.mlp_widths = cfg.get_int_list(section, "mlp_widths", sc.bundle.mlp_widths);
  sc.bundle.pe_frequencies =
      static_cast<int>(cfg.get_int(section, "pe_frequencies", sc.bundle.pe_frequencies));
  sc.bundle.image.channels = cfg.get_int_list(section, "img_channels", sc.bundle.image.channels);
  sc.bundle.image.strides = cfg.get_int_list(section, "img_strides", sc.bundle.image.strides);
  sc.bundle.volume.channels =
      cfg.get_int_list(section, "vol_channels", sc.bundle.volume.channels);
  return sc;
}

// ---------------------------------------------------------------------------
// Stage checkpoints (parameters + optimizer + self-describing meta)
// ---------------------------------------------------------------------------

namespace detail {
inline Tensor int_list_tensor(const std::vector<int>& v) {
  std::vector<double> d(v.begin(), v.end());
  return Tensor::from_data({static_cast<int64_t>(v.size())}, std::move(d));
}
inline std::vector<int> int_list_from(const Tensor& t) {
  std::vector<int> out;
  for (int64_t i = 0; i < t.numel(); ++i) out.push_back(static_cast<int>(t.data()[i]));
  return out;
}
}  // namespace detail

inline void save_stage_checkpoint(const FieldBundle& bundle, const OptimState* opt,
                                  int64_t iter, const std::string& path) {
  NamedTensors items = bundle.named_params();
  items.emplace_back("meta/fusion", Tensor::scalar(bundle.cfg.fusion ? 1.0 : 0.0));
  items.emplace_back("meta/pe_frequencies", Tensor::scalar(bundle.cfg.pe_frequencies));
  items.emplace_back("meta/mlp_widths", detail::int_list_tensor(bundle.cfg.mlp_widths));
  items.emplace_back("meta/img_channels", detail::int_list_tensor(bundle.cfg.image.channels));
  items.emplace_back("meta/img_strides", detail::int_list_tensor(bundle.cfg.image.strides));
  items.emplace_back("meta/vol_channels", detail::int_list_tensor(bundle.cfg.volume.channels));
  items.emplace_back("meta/iter", Tensor::scalar(static_cast<double>(iter)));
  if (opt) {
    items.emplace_back("optim/step", Tensor::scalar(static_cast<double>(opt->step_count)));
    for (size_t i = 0; i < opt->first_moment.size(); ++i) {
      items.emplace_back("optim/" + std::to_string(i) + "/m1", opt->first_moment[i]);
      items.emplace_back("optim/" + std::to_string(i) + "/m2", opt->second_moment[i]);
    }
  }
  save_checkpoint(path, items);
}

inline FieldBundle bundle_from_checkpoint(const NamedTensors& items) {
  FieldBundleConfig cfg;
  cfg.fusion = require_tensor(items, "meta/fusion").value() != 0.0;
  cfg.pe_frequencies = static_cast<int>(require_tensor(items, "meta/pe_frequencies").value());
  cfg.mlp_widths = detail::int_list_from(require_tensor(items, "meta/mlp_widths"));
  cfg.image.channels = detail::int_list_from(require_tensor(items, "meta/img_channels"));
  cfg.image.strides = detail::int_list_from(require_tensor(items, "meta/img_strides"));
  cfg.volume.channels = detail::int_list_from(require_tensor(items, "meta/vol_channels"));
  FieldBundle bundle = FieldBundle::create(cfg, RngStream(0));
  bundle.load_named_params(items);
  return bundle;
}

inline void restore_optimizer(OptimState& opt, const NamedTensors& items) {
  const Tensor* step = find_tensor(items, "optim/step");
  if (!step) return;
  opt.step_count = static_cast<int64_t>(step->value());
  for (size_t i = 0; i < opt.first_moment.size(); ++i) {
    opt.first_moment[i].impl()->data =
        require_tensor(items, "optim/" + std::to_string(i) + "/m1").values();
    opt.second_moment[i].impl()->data =
        require_tensor(items, "optim/" + std::to_string(i) + "/m2").values();
  }
}

// ---------------------------------------------------------------------------
// In-memory training context
// ---------------------------------------------------------------------------

struct SceneCache {
  const SceneRecord* record = nullptr;
  std::vector<Image> views;
  std::vector<Image> masks;
  ProxyVolume proxy;
};

struct TrainContext {
  std::vector<SceneCache> scenes;
  int views = 0;
  int resolution = 0;

  static TrainContext load(const SceneDataset& ds) {
    TrainContext ctx;
    ctx.views = ds.views;
    ctx.resolution = ds.resolution;
    for (const auto& rec : ds.scenes) {
      SceneCache sc;
      sc.record = &rec;
      for (int k = 0; k < ds.views; ++k) {
        sc.views.push_back(rec.load_view(k));
        sc.masks.push_back(rec.load_mask(k));
      }
      sc.proxy = rec.load_proxy();
      ctx.scenes.push_back(std::move(sc));
    }
    return ctx;
  }
};

// ---------------------------------------------------------------------------
// Field training (initial stage and fusion stage share the loop)
// ---------------------------------------------------------------------------

struct TrainResult {
  std::vector<double> losses;             // per-iteration totals
  std::vector<double> window_means;       // 500-iteration windows
  std::string final_checkpoint;
  int iters_run = 0;
};

inline TrainResult train_field(const TrainContext& ctx, const StageConfig& cfg) {
  namespace fs = std::filesystem;
  if (ctx.scenes.empty()) fail("train_field: empty dataset");
  if (!cfg.out_dir.empty()) fs::create_directories(cfg.out_dir);

  FieldBundle bundle = FieldBundle::create(cfg.bundle, RngStream(cfg.seed).child("init"));
  if (cfg.fusion) {
    const int expect = 2 * cfg.bundle.image.out_channels() + cfg.bundle.volume.out_channels();
    if (bundle.cfg.field().cond_dim != expect)
      fail("train_field: fusion condition width mismatch");
    if (bundle.cfg.field().head_width() != 7) fail("train_field: fusion head must be 7-wide");
  }
  std::vector<Tensor> params = bundle.params();
  AdamConfig adam;
  adam.learning_rate = cfg.lr;
  adam.beta1 = cfg.beta1;
  adam.beta2 = cfg.beta2;
  OptimState opt = make_adam(params, adam);

  int start_iter = 0;
  if (!cfg.resume.empty()) {
    NamedTensors items = load_checkpoint(cfg.resume);
    bundle.load_named_params(items);
    restore_optimizer(opt, items);
    start_iter = static_cast<int>(require_tensor(items, "meta/iter").value());
  }

  std::optional<LossCsv> csv;
  if (!cfg.out_dir.empty()) csv.emplace(cfg.out_dir + "/losses.csv");

  // view pools with the held-out view excluded
  std::vector<int> source_views, target_views;
  for (int v = 0; v < ctx.views; ++v) {
    if (v == cfg.holdout_view) continue;
    target_views.push_back(v);
    const int back = (v + ctx.views / 2) % ctx.views;
    if (cfg.fusion && back == cfg.holdout_view) continue;
    source_views.push_back(v);
  }
  if (source_views.empty() || target_views.empty())
    fail("train_field: no usable views after holdout");

  RenderConfig rc;
  rc.n_coarse = cfg.n_coarse;
  rc.n_fine = cfg.n_fine;

  TrainResult result;
  auto save = [&](int64_t iter, const std::string& name) {
    if (cfg.out_dir.empty()) return std::string();
    const std::string path = cfg.out_dir + "/" + name;
    save_stage_checkpoint(bundle, &opt, iter, path);
    return path;
  };

  for (int iter = start_iter; iter < cfg.iters; ++iter) {
    RngStream it = RngStream(cfg.seed).child("train_iter", static_cast<uint64_t>(iter));
    Tensor total = Tensor::scalar(0.0);
    double recon_sum = 0, vol_sum = 0;
    for (int b = 0; b < cfg.batch; ++b) {
      RngStream bs = it.child("batch", static_cast<uint64_t>(b));
      const SceneCache& sc =
          ctx.scenes[static_cast<size_t>(bs.uniform_int(static_cast<int64_t>(ctx.scenes.size())))];
      const int src =
          source_views[static_cast<size_t>(bs.uniform_int(static_cast<int64_t>(source_views.size())))];
      const Camera src_cam = sc.record->camera(src);

      PreparedScene prep;
      if (cfg.fusion) {
        const int back = sc.record->backside_view(src);
        const Camera back_cam = sc.record->camera(back);
        prep = prepare_scene(bundle, sc.views[static_cast<size_t>(src)], src_cam, sc.proxy,
                             &sc.views[static_cast<size_t>(back)], &back_cam);
      } else {
        prep = prepare_scene(bundle, sc.views[static_cast<size_t>(src)], src_cam, sc.proxy);
      }

      // 3D point supervision
      PointSampleSet points = sample_points(sc.record->scene, cfg.points_occ, cfg.points_color,
                                            cfg.sigma, bs.child("points"));
      std::vector<Vec3> all_pts = points.occ_points;
      all_pts.insert(all_pts.end(), points.color_points.begin(), points.color_points.end());
      FieldSamples fsamp = eval_field_bundle(bundle, prep, all_pts);
      const int64_t n_occ = static_cast<int64_t>(points.occ_points.size());
      const int64_t n_col = static_cast<int64_t>(points.color_points.size());
      Tensor recon = loss_recon(slice(fsamp.alpha, 0, 0, n_occ),
                                targets_tensor(points.occ_targets),
                                slice(fsamp.color, 0, n_occ, n_col),
                                slice(fsamp.final_color, 0, n_occ, n_col),
                                targets_tensor(points.color_targets));
      recon_sum += recon.value();
      Tensor scene_loss = recon;

      // 2D ray supervision on a random non-holdout view
      if (cfg.use_vol && cfg.rays > 0) {
        RngStream rs = bs.child("rays");
        const int tv = target_views[static_cast<size_t>(
            rs.uniform_int(static_cast<int64_t>(target_views.size())))];
        const Camera target_cam = sc.record->camera(tv);
        const Image& gt = sc.views[static_cast<size_t>(tv)];
        std::vector<std::pair<int, int>> pixels;
        std::vector<double> targets;
        pixels.reserve(static_cast<size_t>(cfg.rays));
        for (int rix = 0; rix < cfg.rays; ++rix) {
          const int x = static_cast<int>(rs.uniform_int(ctx.resolution));
          const int y = static_cast<int>(rs.uniform_int(ctx.resolution));
          pixels.emplace_back(x, y);
          const Vec3 c = gt.rgb_at(y, x);
          targets.push_back(c.x);
          targets.push_back(c.y);
          targets.push_back(c.z);
        }
        RayBatch rays = gen_rays(target_cam, pixels);
        FieldSampler sampler = [&bundle, &prep](const std::vector<Vec3>& pts, Tensor* alpha,
                                                Tensor* payload) {
          FieldSamples s = eval_field_bundle(bundle, prep, pts);
          *alpha = s.alpha;
          *payload = concat({s.color, s.final_color}, 1);
        };
        RayRender rr = render_rays(sampler, rays, rc, rs.child("render"));
        Tensor target_t = Tensor::from_data({cfg.rays, 3}, std::move(targets));
        Tensor vol = loss_vol(slice(rr.color, 1, 0, 3), slice(rr.color, 1, 3, 3), target_t);
        vol_sum += vol.value();
        scene_loss = add(scene_loss, vol);
      }
      total = add(total, scene_loss);
    }
    total = mul_scalar(total, 1.0 / cfg.batch);

    const double loss_value = total.value();
    if (!std::isfinite(loss_value)) {
      save(iter, "ckpt_abort.occf");
      fail("train_field: non-finite loss at iteration " + std::to_string(iter) +
           "; last checkpoint retained");
    }
    result.losses.push_back(loss_value);

    zero_grads(params);
    backward(total);
    adam_step(params, opt);

    if (csv && (iter % cfg.log_every == 0 || iter + 1 == cfg.iters)) {
      csv->log(iter, "loss_recon", recon_sum / cfg.batch);
      if (cfg.use_vol) csv->log(iter, "loss_vol", vol_sum / cfg.batch);
      csv->log(iter, "loss_total", loss_value);
    }
    if (cfg.ckpt_every > 0 && (iter + 1) % cfg.ckpt_every == 0 && iter + 1 < cfg.iters)
      save(iter + 1, "ckpt_step" + std::to_string(iter + 1) + ".occf");
    result.iters_run = iter + 1;
  }
  result.final_checkpoint = save(cfg.iters, "ckpt_final.occf");

  const size_t window = 500;
  for (size_t w = 0; w + window <= result.losses.size(); w += window) {
    double m = 0;
    for (size_t i = w; i < w + window; ++i) m += result.losses[i];
    result.window_means.push_back(m / window);
  }
  if (csv) csv->flush();
  return result;
}

// ---------------------------------------------------------------------------
// Rendering helpers over trained bundles
// ---------------------------------------------------------------------------

inline PreparedScene prepare_cached(const FieldBundle& bundle, const SceneCache& sc, int src,
                                    const Image* backside_override = nullptr) {
  const Camera cam = sc.record->camera(src);
  if (!bundle.cfg.fusion)
    return prepare_scene(bundle, sc.views[static_cast<size_t>(src)], cam, sc.proxy);
  const int back = sc.record->backside_view(src);
  const Camera back_cam = sc.record->camera(back);
  const Image& back_img =
      backside_override ? *backside_override : sc.views[static_cast<size_t>(back)];
  return prepare_scene(bundle, sc.views[static_cast<size_t>(src)], cam, sc.proxy, &back_img,
                       &back_cam);
}

inline Image render_payload_image(const FieldBundle& bundle, const PreparedScene& prep,
                                  const Camera& cam, RenderPayload payload,
                                  const RenderConfig& rc, uint64_t seed) {
  autodiff::NoGradGuard ng;
  RenderedView v = render_view(bundle_sampler(bundle, prep, payload), cam, rc, RngStream(seed));
  return v.rgb;
}

inline RenderedView render_full(const FieldBundle& bundle, const PreparedScene& prep,
                                const Camera& cam, RenderPayload payload,
                                const RenderConfig& rc, uint64_t seed) {
  autodiff::NoGradGuard ng;
  return render_view(bundle_sampler(bundle, prep, payload), cam, rc, RngStream(seed));
}

// PSNR over the masked foreground; +inf when identical.
inline double psnr_masked(const Image& img, const Image& ref, const Image& mask) {
  if (img.width != ref.width || img.height != ref.height)
    fail("psnr_masked: image sizes disagree");
  double se = 0;
  int64_t n = 0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      if (mask.at(0, y, x) < 0.5) continue;
      for (int c = 0; c < 3; ++c) {
        const double d = img.at(c, y, x) - ref.at(c, y, x);
        se += d * d;
      }
      n += 3;
    }
  if (n == 0) return std::numeric_limits<double>::infinity();
  const double mse = se / static_cast<double>(n);
  if (mse <= 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

// Batched occupancy of a trained bundle, for meshing.
inline BatchedField bundle_occupancy_field(const FieldBundle& bundle,
                                           const PreparedScene& prep) {
  return [&bundle, &prep](const std::vector<Vec3>& pts) {
    autodiff::NoGradGuard ng;
    FieldSamples s = eval_field_bundle(bundle, prep, pts);
    return s.alpha.values();
  };
}

struct GeometryMetrics {
  double chamfer = 0;
  double p2s = 0;
};

inline TriMesh gt_mesh_for(const AnalyticScene& scene, int res = 160) {
  return marching_cubes(batched_occupancy(scene), res, 0.5);
}

inline GeometryMetrics eval_geometry(const TriMesh& pred, const AnalyticScene& scene,
                                     const TriMesh& gt_mesh, int n_samples, uint64_t seed) {
  GeometryMetrics gm;
  RngStream rng(seed);
  gm.chamfer = metric_chamfer(pred, gt_mesh, n_samples, rng.child("chamfer"));
  std::vector<Vec3> gt_points;
  RngStream srng = rng.child("p2s");
  gt_points.reserve(static_cast<size_t>(n_samples));
  for (int i = 0; i < n_samples; ++i) gt_points.push_back(scene.sample_surface(srng));
  gm.p2s = metric_p2s(pred, gt_points);
  return gm;
}

// Textured mesh from a trained bundle (composited colors at the vertices).
inline TriMesh extract_textured_mesh(const FieldBundle& bundle, const PreparedScene& prep,
                                     int mesh_res, double iso) {
  TriMesh mesh = marching_cubes(bundle_occupancy_field(bundle, prep), mesh_res, iso);
  if (!mesh.empty()) {
    vertex_colors(mesh, [&](const std::vector<Vec3>& pts) {
      autodiff::NoGradGuard ng;
      FieldSamples s = eval_field_bundle(bundle, prep, pts);
      std::vector<Vec3> cols(pts.size());
      for (size_t i = 0; i < pts.size(); ++i)
        cols[i] = {s.final_color.at({static_cast<int64_t>(i), 0}),
                   s.final_color.at({static_cast<int64_t>(i), 1}),
                   s.final_color.at({static_cast<int64_t>(i), 2})};
      return cols;
    });
  }
  return mesh;
}

// ---------------------------------------------------------------------------
// Refinement stage orchestration
// ---------------------------------------------------------------------------

// Backside coarse render, rendered mask, and warp field for one scene/view.
struct CoarseBackside {
  Image coarse;      // composited color render from the backside camera
  Image mask;        // rendered mask (accumulated alpha >= 0.5)
  WarpField warp;
};

inline CoarseBackside render_coarse_backside(const FieldBundle& bundle,
                                             const PreparedScene& prep, const Camera& back_cam,
                                             const RenderConfig& rc, uint64_t seed) {
  autodiff::NoGradGuard ng;
  CoarseBackside out;
  RenderedView color =
      render_view(bundle_sampler(bundle, prep, RenderPayload::CompositedColor), back_cam, rc,
                  RngStream(seed).child("color"));
  out.coarse = color.rgb;
  out.mask = Image::create(back_cam.width, back_cam.height, 1);
  for (int y = 0; y < back_cam.height; ++y)
    for (int x = 0; x < back_cam.width; ++x)
      out.mask.at(0, y, x) = color.acc.at(0, y, x) >= rc.mask_threshold ? 1.0 : 0.0;
  out.warp = render_warp_field(bundle_sampler(bundle, prep, RenderPayload::SourceGrid),
                               back_cam, rc, RngStream(seed).child("warp"));
  return out;
}

struct RefineStageConfig {
  RefineTrainConfig train;
  RefinerConfig net;
  int source_view = 0;
  int n_coarse = 24, n_fine = 24;
  uint64_t render_seed = 99;
};

inline RefineStageConfig refine_config_from(const ConfigFile& cfg, int resolution) {
  RefineStageConfig rc;
  rc.net.resolution = resolution;
  rc.train.steps = static_cast<int>(cfg.get_int("refine", "steps", rc.train.steps));
  rc.train.generator_ratio = cfg.get_double("refine", "ratio", rc.train.generator_ratio);
  rc.train.lambda_vgg = cfg.get_double("refine", "lambda_vgg", rc.train.lambda_vgg);
  rc.train.lambda_l1 = cfg.get_double("refine", "lambda_l1", rc.train.lambda_l1);
  rc.train.adversarial = cfg.get_bool("refine", "adversarial", rc.train.adversarial);
  rc.train.lambda_r1 = cfg.get_double("refine", "lambda_r1", rc.train.lambda_r1);
  rc.train.seed =
      static_cast<uint64_t>(cfg.get_int("refine", "seed", static_cast<int64_t>(rc.train.seed)));
  rc.train.checkpoint_every =
      static_cast<int>(cfg.get_int("refine", "ckpt_every", rc.train.checkpoint_every));
  rc.train.log_every = static_cast<int>(cfg.get_int("refine", "log_every", rc.train.log_every));
  rc.net.style_channels =
      static_cast<int>(cfg.get_int("refine", "style_channels", rc.net.style_channels));
  rc.net.pyramid_channels =
      cfg.get_int_list("refine", "pyramid_channels", rc.net.pyramid_channels);
  rc.net.source.channels = cfg.get_int_list("refine", "source_channels", rc.net.source.channels);
  rc.source_view = static_cast<int>(cfg.get_int("refine", "source_view", rc.source_view));
  return rc;
}

inline void save_refiner_checkpoint(const RefinerNet& net, const std::string& path) {
  NamedTensors items = net.named_params();
  items.emplace_back("meta/refine_resolution", Tensor::scalar(net.cfg.resolution));
  items.emplace_back("meta/style_channels", Tensor::scalar(net.cfg.style_channels));
  items.emplace_back("meta/blocks_per_scale", Tensor::scalar(net.cfg.blocks_per_scale));
  items.emplace_back("meta/pyramid_channels",
                     detail::int_list_tensor(net.cfg.pyramid_channels));
  items.emplace_back("meta/source_channels", detail::int_list_tensor(net.cfg.source.channels));
  save_checkpoint(path, items);
}

inline RefinerNet refiner_from_checkpoint(const NamedTensors& items) {
  RefinerConfig cfg;
  cfg.resolution = static_cast<int>(require_tensor(items, "meta/refine_resolution").value());
  cfg.style_channels = static_cast<int>(require_tensor(items, "meta/style_channels").value());
  cfg.blocks_per_scale =
      static_cast<int>(require_tensor(items, "meta/blocks_per_scale").value());
  cfg.pyramid_channels = detail::int_list_from(require_tensor(items, "meta/pyramid_channels"));
  cfg.source.channels = detail::int_list_from(require_tensor(items, "meta/source_channels"));
  RefinerNet net = RefinerNet::create(cfg, RngStream(0));
  net.load_named_params(items);
  return net;
}

// Pre-render pass: one (source view, coarse backside, warp) triple per scene.
inline std::vector<RefineSample> prepare_refine_samples(const FieldBundle& initial,
                                                        const TrainContext& ctx,
                                                        const RefineStageConfig& cfg,
                                                        const std::string& dump_dir = "") {
  namespace fs = std::filesystem;
  RenderConfig rc;
  rc.n_coarse = cfg.n_coarse;
  rc.n_fine = cfg.n_fine;
  std::vector<RefineSample> samples;
  for (size_t s = 0; s < ctx.scenes.size(); ++s) {
    const SceneCache& sc = ctx.scenes[s];
    const int src = cfg.source_view;
    const int back = sc.record->backside_view(src);
    PreparedScene prep = prepare_cached(initial, sc, src);
    CoarseBackside cb = render_coarse_backside(initial, prep, sc.record->camera(back), rc,
                                               cfg.render_seed + s);
    RefineSample sample;
    sample.source = sc.views[static_cast<size_t>(src)];
    sample.coarse_back = cb.coarse;
    sample.gt_back = sc.views[static_cast<size_t>(back)];
    sample.mask = sc.masks[static_cast<size_t>(back)];  // ground-truth mask for training
    sample.warp = cb.warp;
    samples.push_back(std::move(sample));
    if (!dump_dir.empty()) {
      fs::create_directories(dump_dir);
      const std::string base = dump_dir + "/scene" + std::to_string(s);
      save_image(cb.coarse, base + "_coarse_back.png");
      save_warp(cb.warp, base + "_warp.bin");
    }
  }
  return samples;
}

// ---------------------------------------------------------------------------
// Full three-stage reconstruction
// ---------------------------------------------------------------------------

struct ReconstructConfig {
  int mesh_res = 128;
  double iso = 0.5;
  int source_view = 0;
  bool use_gt_back = false;
  int n_coarse = 24, n_fine = 24;
  uint64_t seed = 99;
};

struct ReconstructOutputs {
  TriMesh mesh;
  Image coarse_back;
  Image refined_back;
  WarpField warp;
};

inline ReconstructOutputs reconstruct_scene(const FieldBundle& initial,
                                            const RefinerNet* refiner,
                                            const FieldBundle& fusion, const SceneCache& sc,
                                            const ReconstructConfig& cfg,
                                            const std::string& out_dir = "") {
  namespace fs = std::filesystem;
  if (fs::path dir(out_dir); !out_dir.empty()) fs::create_directories(dir);
  RenderConfig rc;
  rc.n_coarse = cfg.n_coarse;
  rc.n_fine = cfg.n_fine;

  const int src = cfg.source_view;
  const int back = sc.record->backside_view(src);
  const Camera back_cam = sc.record->camera(back);

  ReconstructOutputs out;
  PreparedScene prep_initial = prepare_cached(initial, sc, src);
  CoarseBackside cb = render_coarse_backside(initial, prep_initial, back_cam, rc, cfg.seed);
  out.coarse_back = cb.coarse;
  out.warp = cb.warp;

  if (cfg.use_gt_back || refiner == nullptr) {
    out.refined_back = sc.views[static_cast<size_t>(back)];
  } else {
    autodiff::NoGradGuard ng;
    Tensor refined = refiner->forward(cb.coarse.to_tensor(),
                                      sc.views[static_cast<size_t>(src)].to_tensor(), cb.warp,
                                      cb.mask, nullptr);
    out.refined_back = Image::from_tensor(refined);
  }

  PreparedScene prep_fusion = prepare_cached(fusion, sc, src, &out.refined_back);
  out.mesh = extract_textured_mesh(fusion, prep_fusion, cfg.mesh_res, cfg.iso);

  if (!out_dir.empty()) {
    save_image(out.coarse_back, out_dir + "/coarse_back.png");
    save_warp(out.warp, out_dir + "/warp.bin");
    save_image(out.refined_back, out_dir + "/refined_back.png");
    export_ply(out.mesh, out_dir + "/mesh.ply");
    export_obj(out.mesh, out_dir + "/mesh.obj");
  }
  return out;
}

}  // namespace occufield
