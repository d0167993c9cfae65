// SPDX-License-Identifier: Apache-2.0
//
// occufield <subcommand> --config <path> [overrides]
//
// Subcommands: synth-data, train-initial, train-fusion, train-refine,
// render-views, reconstruct, eval, grad-check. Exit codes: 0 ok, 1 usage,
// 2 runtime failure, 3 check failure.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>

#include "occufield/gradcheck_suite.hpp"
#include "occufield/pipeline.hpp"

namespace occ = occufield;
namespace fs = std::filesystem;

namespace {

const std::map<std::string, std::set<std::string>>& config_schema() {
  static const std::map<std::string, std::set<std::string>> schema = {
      {"data",
       {"out", "scenes", "views", "resolution", "seed", "proxy_res", "inflate_radius",
        "points_occ", "points_color", "sigma"}},
      {"initial",
       {"preset", "iters", "batch", "points_occ", "points_color", "rays", "n_coarse", "n_fine",
        "lr", "beta1", "beta2", "sigma", "use_vol", "seed", "ckpt_every", "log_every",
        "holdout_view", "mlp_widths", "pe_frequencies", "img_channels", "img_strides",
        "vol_channels", "out"}},
      {"fusion",
       {"preset", "iters", "batch", "points_occ", "points_color", "rays", "n_coarse", "n_fine",
        "lr", "beta1", "beta2", "sigma", "use_vol", "seed", "ckpt_every", "log_every",
        "holdout_view", "mlp_widths", "pe_frequencies", "img_channels", "img_strides",
        "vol_channels", "out"}},
      {"refine",
       {"steps", "ratio", "lambda_vgg", "lambda_l1", "adversarial", "lambda_r1", "seed",
        "ckpt_every", "log_every", "style_channels", "pyramid_channels", "source_channels",
        "source_view", "out"}},
      {"eval", {"mesh_res", "iso", "chamfer_samples", "gt_mesh_res"}},
      {"reconstruct", {"mesh_res", "iso"}},
  };
  return schema;
}

occ::ConfigFile load_config(const std::string& path, const std::vector<std::string>& sets) {
  occ::ConfigFile cfg = path.empty() ? occ::ConfigFile() : occ::ConfigFile::parse(path);
  for (const auto& s : sets) cfg.set_override(s);
  cfg.validate(config_schema());
  return cfg;
}

occ::DatasetConfig dataset_config_from(const occ::ConfigFile& cfg) {
  occ::DatasetConfig dc;
  dc.out_dir = cfg.get("data", "out", "runs/dataset");
  dc.n_scenes = static_cast<int>(cfg.get_int("data", "scenes", dc.n_scenes));
  dc.views = static_cast<int>(cfg.get_int("data", "views", dc.views));
  dc.resolution = static_cast<int>(cfg.get_int("data", "resolution", dc.resolution));
  dc.seed = static_cast<uint64_t>(cfg.get_int("data", "seed", static_cast<int64_t>(dc.seed)));
  dc.proxy_res = static_cast<int>(cfg.get_int("data", "proxy_res", dc.proxy_res));
  dc.inflate_radius = cfg.get_double("data", "inflate_radius", dc.inflate_radius);
  dc.points_occ = static_cast<int>(cfg.get_int("data", "points_occ", dc.points_occ));
  dc.points_color = static_cast<int>(cfg.get_int("data", "points_color", dc.points_color));
  dc.sigma = cfg.get_double("data", "sigma", dc.sigma);
  return dc;
}

int run_train_stage(const occ::ConfigFile& cfg, const std::string& section,
                    const std::string& data_dir, const std::string& out_override,
                    const std::string& resume, bool no_vol) {
  occ::StageConfig sc = occ::stage_config_from(cfg, section, section == "fusion");
  sc.out_dir = out_override.empty() ? cfg.get(section, "out", "runs/" + section) : out_override;
  sc.resume = resume;
  if (no_vol) sc.use_vol = false;
  occ::SceneDataset ds = occ::load_dataset(data_dir);
  occ::TrainContext ctx = occ::TrainContext::load(ds);
  const auto t0 = std::chrono::steady_clock::now();
  occ::TrainResult result = occ::train_field(ctx, sc);
  const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << section << ": " << result.iters_run << " iterations in " << dt << " s, final "
            << "checkpoint " << result.final_checkpoint << "\n";
  if (!result.losses.empty())
    std::cout << section << ": last loss " << result.losses.back() << "\n";
  return 0;
}

std::string payload_name(occ::RenderPayload p) {
  switch (p) {
    case occ::RenderPayload::Color: return "color";
    case occ::RenderPayload::CompositedColor: return "composited";
    case occ::RenderPayload::Gamma: return "gamma";
    case occ::RenderPayload::SourceGrid: return "grid";
  }
  return "payload";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"occupancy-field reconstruction pipeline"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, data_dir, out_dir, resume;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "configuration file (key=value with [sections])");
  app.add_option("--set", overrides, "override as section.key=value (repeatable)");

  auto* synth = app.add_subcommand("synth-data", "generate an analytic scene dataset");
  bool force = false;
  synth->add_flag("--force", force, "replace an existing dataset");
  synth->add_option("--out", out_dir, "output run directory");

  auto* train_initial = app.add_subcommand("train-initial", "train the initial-stage field");
  bool no_vol = false;
  train_initial->add_option("--data", data_dir, "dataset directory")->required();
  train_initial->add_option("--out", out_dir, "run output directory");
  train_initial->add_option("--resume", resume, "checkpoint to resume from");
  train_initial->add_flag("--no-vol", no_vol, "disable the volume rendering loss");

  auto* train_fusion = app.add_subcommand("train-fusion", "train the fusion-stage field");
  train_fusion->add_option("--data", data_dir, "dataset directory")->required();
  train_fusion->add_option("--out", out_dir, "run output directory");
  train_fusion->add_option("--resume", resume, "checkpoint to resume from");

  auto* train_refine = app.add_subcommand("train-refine", "train the backside refiner");
  std::string initial_ckpt, refiner_ckpt, fusion_ckpt;
  train_refine->add_option("--data", data_dir, "dataset directory")->required();
  train_refine->add_option("--initial", initial_ckpt, "initial-stage checkpoint")->required();
  train_refine->add_option("--out", out_dir, "run output directory");

  auto* render = app.add_subcommand("render-views", "render color/mask/gamma/warp outputs");
  int scene_id = 0, view = 0;
  render->add_option("--ckpt", initial_ckpt, "field checkpoint")->required();
  render->add_option("--data", data_dir, "dataset directory")->required();
  render->add_option("--scene", scene_id, "scene index");
  render->add_option("--view", view, "source view index");
  render->add_option("--out", out_dir, "output directory")->required();

  auto* reconstruct = app.add_subcommand("reconstruct", "full three-stage reconstruction");
  bool use_gt_back = false;
  int mesh_res = 128;
  double iso = 0.5;
  reconstruct->add_option("--initial", initial_ckpt, "initial checkpoint")->required();
  reconstruct->add_option("--refiner", refiner_ckpt, "refiner checkpoint");
  reconstruct->add_option("--fusion", fusion_ckpt, "fusion checkpoint")->required();
  reconstruct->add_option("--data", data_dir, "dataset directory")->required();
  reconstruct->add_option("--scene", scene_id, "scene index");
  reconstruct->add_option("--view", view, "source view index");
  reconstruct->add_option("--out", out_dir, "output directory")->required();
  reconstruct->add_option("--mesh-res", mesh_res, "marching cubes grid resolution");
  reconstruct->add_option("--iso", iso, "occupancy iso value");
  reconstruct->add_flag("--use-gt-back", use_gt_back,
                        "bypass the refiner with the ground-truth backside view");

  auto* eval = app.add_subcommand("eval", "geometry and texture metrics vs ground truth");
  std::string report_path = "report.csv", scene_list;
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--initial", initial_ckpt, "initial checkpoint")->required();
  eval->add_option("--fusion", fusion_ckpt, "fusion checkpoint (optional)");
  eval->add_option("--refiner", refiner_ckpt, "refiner checkpoint (optional)");
  eval->add_option("--scenes", scene_list, "comma-separated scene indices (default: all)");
  eval->add_option("--view", view, "evaluation view index");
  eval->add_option("--out", report_path, "CSV report path");

  auto* gradcheck = app.add_subcommand("grad-check", "finite-difference gate over all paths");
  bool inject = false;
  gradcheck->add_flag("--inject-sign-error", inject, "negative control: inject a bad gradient");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    occ::ConfigFile cfg = load_config(config_path, overrides);

    if (*synth) {
      occ::DatasetConfig dc = dataset_config_from(cfg);
      if (!out_dir.empty()) dc.out_dir = out_dir;
      occ::make_dataset(dc, force);
      std::cout << "dataset: " << dc.n_scenes << " scenes x " << dc.views << " views at "
                << dc.resolution << "px -> " << dc.out_dir << "\n";
      return 0;
    }
    if (*train_initial) return run_train_stage(cfg, "initial", data_dir, out_dir, resume, no_vol);
    if (*train_fusion) return run_train_stage(cfg, "fusion", data_dir, out_dir, resume, false);

    if (*train_refine) {
      occ::SceneDataset ds = occ::load_dataset(data_dir);
      occ::TrainContext ctx = occ::TrainContext::load(ds);
      occ::FieldBundle initial = occ::bundle_from_checkpoint(occ::load_checkpoint(initial_ckpt));
      occ::RefineStageConfig rc = occ::refine_config_from(cfg, ds.resolution);
      rc.train.out_dir = out_dir.empty() ? cfg.get("refine", "out", "runs/refine") : out_dir;
      fs::create_directories(rc.train.out_dir);
      std::cout << "refine: pre-rendering coarse backside views and warp fields\n";
      std::vector<occ::RefineSample> samples =
          occ::prepare_refine_samples(initial, ctx, rc, rc.train.out_dir + "/prerender");
      occ::RefinerNet net = occ::RefinerNet::create(rc.net, occ::RngStream(rc.train.seed));
      occ::LossCsv csv(rc.train.out_dir + "/losses.csv");
      const auto t0 = std::chrono::steady_clock::now();
      occ::RefineTrainResult res = occ::train_refiner(net, samples, rc.train, &csv);
      const double dt =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      occ::save_refiner_checkpoint(net, rc.train.out_dir + "/refiner_final.occf");
      std::cout << "refine: " << res.steps_run << " steps in " << dt << " s, loss "
                << res.first_loss << " -> " << res.last_loss << "\n";
      return 0;
    }

    if (*render) {
      occ::SceneDataset ds = occ::load_dataset(data_dir);
      if (scene_id < 0 || scene_id >= static_cast<int>(ds.scenes.size()))
        occ::fail("render-views: scene index out of range");
      if (view < 0 || view >= ds.views) occ::fail("render-views: view index out of range");
      occ::TrainContext ctx = occ::TrainContext::load(ds);
      occ::FieldBundle bundle = occ::bundle_from_checkpoint(occ::load_checkpoint(initial_ckpt));
      const occ::SceneCache& sc = ctx.scenes[static_cast<size_t>(scene_id)];
      occ::PreparedScene prep = occ::prepare_cached(bundle, sc, view);
      fs::create_directories(out_dir);
      occ::RenderConfig rcfg;
      const occ::Camera cam = sc.record->camera(view);
      const int back = sc.record->backside_view(view);
      const occ::Camera back_cam = sc.record->camera(back);
      for (occ::RenderPayload p : {occ::RenderPayload::Color, occ::RenderPayload::CompositedColor,
                                   occ::RenderPayload::Gamma}) {
        occ::Image img = occ::render_payload_image(bundle, prep, cam, p, rcfg, 7);
        occ::save_image(img, out_dir + "/" + payload_name(p) + ".png");
      }
      occ::Image mask = occ::render_mask(occ::bundle_sampler(bundle, prep,
                                                             occ::RenderPayload::Color),
                                         cam, rcfg, occ::RngStream(7), 0.5);
      occ::save_image(mask, out_dir + "/mask.png");
      occ::CoarseBackside cb = occ::render_coarse_backside(bundle, prep, back_cam, rcfg, 7);
      occ::save_image(cb.coarse, out_dir + "/coarse_back.png");
      occ::save_warp(cb.warp, out_dir + "/warp.bin");
      std::cout << "render-views: wrote color/composited/gamma/mask/coarse_back/warp to "
                << out_dir << "\n";
      return 0;
    }

    if (*reconstruct) {
      occ::SceneDataset ds = occ::load_dataset(data_dir);
      if (scene_id < 0 || scene_id >= static_cast<int>(ds.scenes.size()))
        occ::fail("reconstruct: scene index out of range");
      occ::TrainContext ctx = occ::TrainContext::load(ds);
      occ::FieldBundle initial = occ::bundle_from_checkpoint(occ::load_checkpoint(initial_ckpt));
      occ::FieldBundle fusion = occ::bundle_from_checkpoint(occ::load_checkpoint(fusion_ckpt));
      occ::RefinerNet refiner;
      const bool have_refiner = !refiner_ckpt.empty();
      if (have_refiner)
        refiner = occ::refiner_from_checkpoint(occ::load_checkpoint(refiner_ckpt));
      occ::ReconstructConfig rc;
      rc.mesh_res = static_cast<int>(cfg.get_int("reconstruct", "mesh_res", mesh_res));
      rc.iso = cfg.get_double("reconstruct", "iso", iso);
      rc.source_view = view;
      rc.use_gt_back = use_gt_back;
      occ::ReconstructOutputs out = occ::reconstruct_scene(
          initial, have_refiner ? &refiner : nullptr, fusion,
          ctx.scenes[static_cast<size_t>(scene_id)], rc, out_dir);
      std::cout << "reconstruct: mesh with " << out.mesh.vertices.size() << " vertices / "
                << out.mesh.triangles.size() << " triangles -> " << out_dir << "/mesh.ply\n";
      return 0;
    }

    if (*eval) {
      occ::SceneDataset ds = occ::load_dataset(data_dir);
      occ::TrainContext ctx = occ::TrainContext::load(ds);
      occ::FieldBundle initial = occ::bundle_from_checkpoint(occ::load_checkpoint(initial_ckpt));
      std::optional<occ::FieldBundle> fusion;
      if (!fusion_ckpt.empty())
        fusion = occ::bundle_from_checkpoint(occ::load_checkpoint(fusion_ckpt));
      occ::RefinerNet refiner;
      const bool have_refiner = !refiner_ckpt.empty();
      if (have_refiner)
        refiner = occ::refiner_from_checkpoint(occ::load_checkpoint(refiner_ckpt));

      std::vector<int> scene_ids;
      if (scene_list.empty()) {
        for (size_t i = 0; i < ds.scenes.size(); ++i) scene_ids.push_back(static_cast<int>(i));
      } else {
        std::istringstream ls(scene_list);
        std::string tok;
        while (std::getline(ls, tok, ',')) scene_ids.push_back(std::stoi(tok));
      }
      const int eval_mesh_res = static_cast<int>(cfg.get_int("eval", "mesh_res", 128));
      const double eval_iso = cfg.get_double("eval", "iso", 0.5);
      const int samples = static_cast<int>(cfg.get_int("eval", "chamfer_samples", 10000));
      const int gt_res = static_cast<int>(cfg.get_int("eval", "gt_mesh_res", 160));

      std::ofstream report(report_path, std::ios::trunc);
      if (!report) occ::fail("eval: cannot write " + report_path);
      report << "scene,p2s,chamfer,psnr\n";
      occ::RenderConfig rcfg;
      double sum_p2s = 0, sum_ch = 0, sum_psnr = 0;
      int counted = 0;
      for (int sid : scene_ids) {
        if (sid < 0 || sid >= static_cast<int>(ds.scenes.size())) {
          std::cerr << "eval: warning: scene " << sid << " missing, skipped\n";
          continue;
        }
        const occ::SceneCache& sc = ctx.scenes[static_cast<size_t>(sid)];
        const int src = 0;
        occ::TriMesh pred;
        occ::Image rendered;
        if (fusion) {
          occ::ReconstructConfig rc;
          rc.mesh_res = eval_mesh_res;
          rc.iso = eval_iso;
          rc.source_view = src;
          rc.use_gt_back = !have_refiner;
          occ::ReconstructOutputs out = occ::reconstruct_scene(
              initial, have_refiner ? &refiner : nullptr, *fusion, sc, rc);
          pred = out.mesh;
          occ::PreparedScene prep = occ::prepare_cached(*fusion, sc, src, &out.refined_back);
          rendered = occ::render_payload_image(*fusion, prep, sc.record->camera(view),
                                               occ::RenderPayload::CompositedColor, rcfg, 7);
        } else {
          occ::PreparedScene prep = occ::prepare_cached(initial, sc, src);
          pred = occ::extract_textured_mesh(initial, prep, eval_mesh_res, eval_iso);
          rendered = occ::render_payload_image(initial, prep, sc.record->camera(view),
                                               occ::RenderPayload::CompositedColor, rcfg, 7);
        }
        occ::TriMesh gt_mesh = occ::gt_mesh_for(sc.record->scene, gt_res);
        occ::GeometryMetrics gm =
            occ::eval_geometry(pred, sc.record->scene, gt_mesh, samples, 1234);
        const double psnr = occ::psnr_masked(rendered, sc.views[static_cast<size_t>(view)],
                                             sc.masks[static_cast<size_t>(view)]);
        report << sid << "," << gm.p2s << "," << gm.chamfer << ","
               << (std::isinf(psnr) ? "inf" : std::to_string(psnr)) << "\n";
        sum_p2s += gm.p2s;
        sum_ch += gm.chamfer;
        sum_psnr += psnr;
        ++counted;
      }
      if (counted > 0)
        report << "ALL," << sum_p2s / counted << "," << sum_ch / counted << ","
               << sum_psnr / counted << "\n";
      std::cout << "eval: wrote " << report_path << " for " << counted << " scenes\n";
      return 0;
    }

    if (*gradcheck) {
      const auto t0 = std::chrono::steady_clock::now();
      std::vector<occ::GradSuiteEntry> entries = occ::run_gradcheck_suite(inject);
      int failures = 0;
      for (const auto& e : entries) {
        std::printf("%-44s max_rel_err=%.3e %s\n", e.name.c_str(), e.max_rel_err,
                    e.passed ? "PASS" : "FAIL");
        failures += e.passed ? 0 : 1;
      }
      const double dt =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::printf("grad-check: %zu paths, %d failures, %.1f s\n", entries.size(), failures, dt);
      return failures == 0 ? 0 : 3;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
