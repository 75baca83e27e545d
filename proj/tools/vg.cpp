// vg: synthetic scene generation, grounding runs and evaluation.

#include <CLI11.hpp>

#include "vg/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"3D visual grounding on RGB-D scenes"};
  app.require_subcommand(1);

  vg::RunManifest m;
  std::string mode = "scripted", toolkit = "oracle", config, gt, replay, planner, rec;
  int jobs = 0, max_frames = 0;
  auto add_run_options = [&](CLI::App* c) {
    c->add_option("--mode", mode, "scripted or react")->check(CLI::IsMember({"scripted", "react"}));
    c->add_option("--toolkit", toolkit, "oracle, replay or remote")->check(CLI::IsMember({"oracle", "replay", "remote"}));
    c->add_option("--config", config, "Pipeline config JSON")->check(CLI::ExistingFile);
    c->add_option("--ground-truth", gt, "Oracle ground truth (default <scene>/ground_truth.json)");
    c->add_option("--replay-log", replay, "Replay log for --toolkit replay");
    c->add_option("--planner-log", planner, "Replay log for the react planner");
    c->add_option("--planner-url", m.urls.planner, "Planner chat endpoint (or TAB_PLANNER_URL)");
    c->add_option("--chat-url", m.urls.chat, "Chat endpoint (or TAB_CHAT_URL)");
    c->add_option("--detector-url", m.urls.detector, "Detector endpoint (or TAB_DETECTOR_URL)");
    c->add_option("--segmenter-url", m.urls.segmenter, "Segmenter endpoint (or TAB_SEGMENTER_URL)");
    c->add_option("--timeout", m.urls.timeout_s, "Remote request timeout in seconds");
    c->add_option("--record", rec, "Write every toolkit exchange as a replay log");
    c->add_option("--max-frames", max_frames, "Frame sampling cap");
  };

  auto* ground = app.add_subcommand("ground", "Ground one query in one scene");
  std::string scene, query, out;
  ground->add_option("--scene", scene, "Scene directory")->required();
  ground->add_option("--query", query, "Referring expression")->required();
  ground->add_option("--out", out, "Output directory")->required();
  ground->add_option("--jobs", jobs, "Concurrent per-frame model calls");
  add_run_options(ground);

  auto* batch = app.add_subcommand("batch", "Ground every query of a JSON-lines manifest");
  std::string manifest;
  int batch_jobs = 1;
  batch->add_option("--manifest", manifest, "Lines of {query_id, scene, query, subset}")->required();
  batch->add_option("--out", out, "Output directory")->required();
  batch->add_option("--jobs", batch_jobs, "Runs in flight");
  add_run_options(batch);

  auto* simulate = app.add_subcommand("simulate", "Render a synthetic scene from a spec");
  std::string spec, sim_out;
  simulate->add_option("--spec", spec, "Synthetic scene spec JSON")->required();
  simulate->add_option("--out", sim_out, "Scene directory to write")->required();

  auto* eval = app.add_subcommand("eval", "Score predictions against ground truth");
  vg::EvalOptions eo;
  std::string pred, gtf, proposals, candidates, thresholds = "0.25,0.5", eval_out;
  eval->add_option("--pred", pred, "Predictions JSON lines")->required();
  eval->add_option("--gt", gtf, "Ground truth JSON lines")->required();
  eval->add_option("--proposals", proposals, "Proposal boxes JSON lines");
  eval->add_flag("--top1", eo.top1, "Top-1 selection against candidate boxes");
  eval->add_option("--candidates", candidates, "Candidate sets JSON lines");
  eval->add_option("--thresholds", thresholds, "Comma-separated IoU thresholds");
  eval->add_option("--out", eval_out, "Report directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : vg::kExitError;
  }

  try {
    if (simulate->parsed()) return vg::cmd_simulate(spec, sim_out);
    if (eval->parsed()) {
      eo.pred = pred;
      eo.gt = gtf;
      eo.out = eval_out;
      if (!proposals.empty()) eo.proposals = proposals;
      if (!candidates.empty()) eo.candidates = candidates;
      eo.thresholds = vg::parse_thresholds(thresholds);
      return vg::cmd_eval(eo);
    }
    m.mode = vg::parse_mode(mode);
    m.toolkit = vg::parse_toolkit(toolkit);
    if (!config.empty()) m.config = config;
    if (!gt.empty()) m.ground_truth = gt;
    if (!replay.empty()) m.replay_log = replay;
    if (!planner.empty()) m.planner_log = planner;
    if (!rec.empty()) m.record = rec;
    if (jobs > 0) m.overrides["jobs"] = jobs;
    if (max_frames > 0) m.overrides["max_frames"] = max_frames;
    m.urls.fill_from_env();
    m.out = out;
    if (batch->parsed()) return vg::cmd_batch(manifest, m, batch_jobs);
    m.scene = scene;
    m.query = query;
    return vg::cmd_ground(m);
  } catch (const vg::Error& e) {
    std::cerr << "error [" << vg::to_string(e.code()) << "]: " << e.what() << "\n";
    return vg::kExitError;
  }
}
