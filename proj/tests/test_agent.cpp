#include <gtest/gtest.h>

#include <random>
#include <regex>

#include "agent_fixtures.hpp"

using namespace vg;
using namespace fixture;

namespace {

class FnChat : public ChatModel {
 public:
  explicit FnChat(std::function<std::string(const ChatRequest&)> fn) : fn_(std::move(fn)) {}
  std::string complete(const ChatRequest& req) override {
    requests.push_back(req);
    return fn_(req);
  }
  bool wants_images() const override { return false; }
  std::vector<ChatRequest> requests;

 private:
  std::function<std::string(const ChatRequest&)> fn_;
};

// Planner that plays back a fixed list of replies, then repeats the last.
std::shared_ptr<FnChat> scripted_planner(std::vector<std::string> replies) {
  auto i = std::make_shared<std::size_t>(0);
  return std::make_shared<FnChat>([replies, i](const ChatRequest&) {
    const auto& r = replies[std::min(*i, replies.size() - 1)];
    ++*i;
    return r;
  });
}

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no vg::Error thrown";
  return Errc::InvalidConfig;
}

struct World {
  Scene scene;
  GroundTruth gt;
};

const World& three_boxes() {
  static const World w = [] {
    auto [s, g] = render_synthetic(sample_spec("three_boxes"));
    return World{std::move(s), std::move(g)};
  }();
  return w;
}

const World& pillow_scene() {
  static const World w = [] {
    auto [s, g] = render_synthetic(sample_spec("scene0435_00"));
    return World{std::move(s), std::move(g)};
  }();
  return w;
}

const char* kChairQuery = "the chair next to the table";

fs::path temp_log(const std::string& name) { return fs::temp_directory_path() / ("vg_agent_" + name + ".json"); }

const TraceStep* find_step(const AgentTrace& t, const std::string& tool, int nth = 0) {
  for (const auto& s : t.steps)
    if (const auto* c = std::get_if<ToolCall>(&s.action); c && c->name == tool && nth-- == 0) return &s;
  return nullptr;
}

}  // namespace

// ---- Action grammar --------------------------------------------------------

TEST(ActionGrammar, ReferenceTraceActionsParse) {
  const auto lines = reference_actions();
  ASSERT_EQ(lines.size(), 17u);
  std::vector<std::string> names;
  for (const auto& l : lines) {
    AgentAction a;
    ASSERT_NO_THROW(a = parse_action(l)) << l;
    if (const auto* c = std::get_if<ToolCall>(&a)) names.push_back(c->name);
    else names.push_back(std::holds_alternative<Finish>(a) ? "Finish" : "Abort");
  }
  std::vector<std::string> expect = reference_tool_order();
  expect.insert(expect.end(), {"Finish", "object_filter", "object_filter", "argmax_image_and_seg_id"});
  EXPECT_EQ(names, expect);

  EXPECT_EQ(std::get<ToolCall>(parse_action(lines[2])).args, json({{"threshold", 0.5}}));
  EXPECT_EQ(std::get<ToolCall>(parse_action(lines[3])).args, json::object());
  EXPECT_EQ(std::get<ToolCall>(parse_action(lines[0])).args["query"], "...");
  EXPECT_EQ(std::get<Finish>(parse_action(lines[13])).message,
            "The 3D bounding box for the pillow on the left bed is [1.6515, 1.1065, 0.7770, 0.4687, 0.6466, 0.2580].");
  EXPECT_EQ(std::get<ToolCall>(parse_action(lines[15])).args["threshold"], 0.3);
}

TEST(ActionGrammar, ReferenceActionsValidateAgainstRegistry) {
  const auto reg = ToolRegistry::load_default();
  for (const auto& l : reference_actions()) {
    const auto a = parse_action(l);
    if (const auto* c = std::get_if<ToolCall>(&a)) EXPECT_NO_THROW(reg.validate(*c)) << l;
  }
}

TEST(ActionGrammar, MalformedStringsAllRejected) {
  const auto& bad = malformed_actions();
  ASSERT_EQ(bad.size(), 20u);
  for (const auto& s : bad) EXPECT_EQ(code_of([&] { parse_action(s); }), Errc::ActionParseError) << "'" << s << "'";
}

TEST(ActionGrammar, ThoughtAndLabelHandling) {
  const auto a = parse_action("Thought: call it.\n**Action:** `vlm_filter({\"image_files_path\": \"x.json\"})`\nObservation: later");
  EXPECT_EQ(std::get<ToolCall>(a), (ToolCall{"vlm_filter", {{"image_files_path", "x.json"}}}));
  const auto last = parse_action("Action: Abort[first]\nThought: changed my mind\nAction: Finish[done]");
  EXPECT_EQ(std::get<Finish>(last).message, "done");
  EXPECT_EQ(std::get<Finish>(parse_action("Finish[box [1, 2, [3]] ok]")).message, "box [1, 2, [3]] ok");
  EXPECT_EQ(std::get<Abort>(parse_action("Abort[]")).reason, "");
}

TEST(ActionGrammar, ElisionsAreDropped) {
  EXPECT_EQ(std::get<ToolCall>(parse_action("t({\"a\": 1, ...})")).args, json({{"a", 1}}));
  EXPECT_EQ(std::get<ToolCall>(parse_action("t({..., \"a\": 1})")).args, json({{"a", 1}}));
  EXPECT_EQ(std::get<ToolCall>(parse_action("t({\"a\": 1, ..., \"b\": 2})")).args, json({{"a", 1}, {"b", 2}}));
  EXPECT_EQ(std::get<ToolCall>(parse_action("t({\"q\": \"wait... what\"})")).args["q"], "wait... what");
}

TEST(ActionGrammar, RenderParseRoundTrip) {
  std::mt19937 rng(8);
  const std::string alphabet = "ab ()[]{}\",:\\.'-_";
  auto word = [&](int n) {
    std::string s;
    for (int i = 0; i < n; ++i) s += alphabet[rng() % alphabet.size()];
    return s;
  };
  for (int i = 0; i < 300; ++i) {
    json args = json::object();
    for (int k = 0; k < static_cast<int>(rng() % 4); ++k) {
      const std::string key = "k" + std::to_string(k);
      switch (rng() % 4) {
        case 0: args[key] = word(8); break;
        case 1: args[key] = static_cast<int>(rng() % 1000) - 500; break;
        case 2: args[key] = json::array({word(3), 0.25, nullptr}); break;
        default: args[key] = {{"nested", word(5)}, {"flag", true}}; break;
      }
    }
    const AgentAction call = ToolCall{"tool_" + std::to_string(i), args};
    EXPECT_EQ(parse_action(render_action(call)), call);
  }
  for (const std::string payload : {"", "plain", "box [1, 2, 3]", "nested [[a] [b]] (x)"}) {
    EXPECT_EQ(parse_action(render_action(Finish{payload})), AgentAction(Finish{payload}));
    EXPECT_EQ(parse_action(render_action(Abort{payload})), AgentAction(Abort{payload}));
  }
}

// ---- Skill, registry and config --------------------------------------------

TEST(Skill, DefaultDocumentHasThirteenSteps) {
  const auto s = SkillDocument::load_default();
  EXPECT_EQ(s.name, "3d_visual_grounding");
  ASSERT_EQ(s.steps.size(), 13u);
  for (std::size_t i = 0; i < s.steps.size(); ++i) EXPECT_EQ(s.steps[i].number, static_cast<int>(i) + 1);
  EXPECT_EQ(s.tips.size(), 2u);
}

TEST(Skill, RejectsGapsInNumbering) {
  const std::string doc =
      "**Name:** `x`\n**Description:** d\n**Instructions:**\n1. **A**: a\n3. **C**: c\n";
  EXPECT_EQ(code_of([&] { SkillDocument::parse(doc); }), Errc::InvalidConfig);
}

TEST(Registry, DefaultToolNames) {
  const auto reg = ToolRegistry::load_default();
  std::vector<std::string> names;
  for (const auto& t : reg.tools()) names.push_back(t.name);
  EXPECT_EQ(names, (std::vector<std::string>{"query_parse", "read_image_files", "object_filter", "vlm_filter", "vlm_score",
                                             "argmax_image_and_seg_id", "segment_target_in_reference",
                                             "vlm_frame_expansion", "segment_all_target_object",
                                             "reconstruct_point_cloud", "centroid_complete", "calculate_bbox"}));
}

TEST(Registry, ValidationErrors) {
  const auto reg = ToolRegistry::load_default();
  try {
    reg.validate({"fly_away", {}});
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::UnknownTool);
    EXPECT_NE(std::string(e.what()).find("calculate_bbox"), std::string::npos);
  }
  try {
    reg.validate({"calculate_bbox", json::object()});
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ArgumentValidation);
    EXPECT_NE(std::string(e.what()).find("pcd_path"), std::string::npos);
  }
  EXPECT_EQ(code_of([&] { reg.validate({"object_filter", {{"threshold", "high"}}}); }), Errc::ArgumentValidation);
  EXPECT_EQ(code_of([&] { reg.validate({"object_filter", {{"colour", "red"}}}); }), Errc::ArgumentValidation);
  EXPECT_EQ(code_of([&] { reg.validate({"calculate_bbox", {{"pcd_path", "..."}}}); }), Errc::ArgumentValidation);
  EXPECT_EQ(reg.validate({"object_filter", {{"threshold", 0.3}, {"parsed_query", "..."}}}), json({{"threshold", 0.3}}));
}

TEST(Registry, RejectsDuplicatesAndUndeclaredRequired) {
  const json tool = {{"name", "t"}, {"description", "d"}, {"parameters", {{"type", "object"}, {"properties", json::object()}}}};
  EXPECT_EQ(code_of([&] { ToolRegistry::from_json({{"tools", {tool, tool}}}); }), Errc::InvalidConfig);
  json req = tool;
  req["parameters"]["required"] = {"x"};
  EXPECT_EQ(code_of([&] { ToolRegistry::from_json({{"tools", {req}}}); }), Errc::InvalidConfig);
}

TEST(Config, ValidationAndOverrides) {
  const auto c = PipelineConfig::from_json({{"threshold", 0.6}, {"sor", {{"k", 8}}}});
  EXPECT_EQ(c.threshold, 0.6);
  EXPECT_EQ(c.sor.k, 8);
  EXPECT_EQ(c.fallback_threshold, 0.3);
  EXPECT_EQ(code_of([] { PipelineConfig::from_json({{"fallback_threshold", 0.7}}); }), Errc::InvalidConfig);
  EXPECT_EQ(code_of([] { PipelineConfig::from_json({{"eps", 0}}); }), Errc::InvalidConfig);
  EXPECT_EQ(code_of([] { PipelineConfig::from_json({{"bogus", 1}}); }), Errc::InvalidConfig);
  EXPECT_EQ(code_of([] { PipelineConfig::from_json({{"ste_cap", "many"}}); }), Errc::InvalidConfig);
  EXPECT_EQ(PipelineConfig::from_json(PipelineConfig().to_json()).to_json(), PipelineConfig().to_json());
}

// ---- Dispatch --------------------------------------------------------------

TEST(Dispatch, ErrorsBecomeObservations) {
  const auto& w = three_boxes();
  Session s(w.scene, kChairQuery, make_oracle_toolkit(w.gt), {});
  int hooked = 0;
  s.after_tool = [&](const std::string&, Session&) { ++hooked; };

  const auto unknown = s.dispatch({"fly_away", json::object()});
  EXPECT_EQ(unknown.error, Errc::UnknownTool);
  EXPECT_EQ(unknown.observation.rfind("Error[UnknownTool]", 0), 0u);

  const auto missing = s.dispatch({"read_image_files", json::object()});
  EXPECT_EQ(missing.error, Errc::ArgumentValidation);
  EXPECT_NE(missing.observation.find("scene_id"), std::string::npos);
  EXPECT_FALSE(s.has("image_files.json"));
  EXPECT_EQ(hooked, 0);

  const auto early = s.dispatch({"object_filter", {{"threshold", 0.5}}});
  EXPECT_EQ(early.error, Errc::ArgumentValidation);
  EXPECT_EQ(hooked, 1);
}

TEST(Dispatch, ObservationShapes) {
  const auto& w = three_boxes();
  Session s(w.scene, kChairQuery, make_oracle_toolkit(w.gt), {});
  EXPECT_FALSE(s.dispatch({"query_parse", {{"query", kChairQuery}}}).error);
  EXPECT_EQ(s.dispatch({"read_image_files", {{"scene_id", "three_boxes"}}}).observation, "image_files.json");
  const auto of = s.dispatch({"object_filter", {{"threshold", 0.5}}});
  EXPECT_TRUE(std::regex_match(of.observation, std::regex(R"(object_filtered_image_files\.json, \d+)"))) << of.observation;
  EXPECT_EQ(of.detail["threshold"], 0.5);
  EXPECT_EQ(s.list_size("image_files.json"), w.scene.frames.size());
}

// ---- Scripted executor -----------------------------------------------------

TEST(Scripted, OracleRunFinishesWithThirteenSteps) {
  const auto& w = three_boxes();
  Session s(w.scene, kChairQuery, make_oracle_toolkit(w.gt), {});
  const auto r = run_scripted(s);
  ASSERT_TRUE(r.trace.finished()) << r.trace.to_jsonl();
  EXPECT_EQ(r.trace.tool_sequence(), reference_tool_order());
  ASSERT_EQ(r.trace.steps.size(), 14u);
  for (const auto& st : r.trace.steps) {
    EXPECT_FALSE(st.error) << st.observation;
    EXPECT_EQ(st.effective_config["threshold"], 0.5);
  }
  EXPECT_GE(iou_with_box(r.bbox, w.gt, 1), 0.9);
  EXPECT_NE(std::get<Finish>(r.trace.steps.back().action).message.find("chair"), std::string::npos);
}

TEST(Scripted, Deterministic) {
  const auto& w = three_boxes();
  Session a(w.scene, "the lamp beside the table", make_oracle_toolkit(w.gt), {});
  Session b(w.scene, "the lamp beside the table", make_oracle_toolkit(w.gt), {});
  EXPECT_EQ(run_scripted(a).trace.to_jsonl(), run_scripted(b).trace.to_jsonl());
}

TEST(Scripted, WritesArtifacts) {
  const auto& w = three_boxes();
  const fs::path out = fs::temp_directory_path() / "vg_agent_artifacts";
  fs::remove_all(out);
  Session s(w.scene, kChairQuery, make_oracle_toolkit(w.gt), {}, out);
  ASSERT_TRUE(run_scripted(s).trace.finished());
  for (const char* f : {"parsed_query.json", "image_files.json", "object_filtered_image_files.json",
                        "vlm_filtered_image_files.json", "vlm_scores.json", "vlm_ranked_image_files.json",
                        "reference_image_mask_results.json", "reference_image_with_target_mask_box.png",
                        "expanded_image_files.json", "final_images.json", "final_masks.json",
                        "centroid_final_images.json", "centroid_final_masks.json", "pred_pcd.ply", "pred_bbox.json"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  EXPECT_EQ(load_json(out / "pred_bbox.json")["bbox"].size(), 6u);
}

TEST(Scripted, LoweredThresholdIsKeptThroughReplay) {
  const auto& w = three_boxes();
  auto tk = make_oracle_toolkit(w.gt);
  tk.detector = std::make_shared<WeakDetector>(tk.detector);
  const auto log = temp_log("weak");
  const auto rec = run_recorded(w.scene, kChairQuery, tk, log);
  ASSERT_TRUE(rec.result.trace.finished());
  const auto rep = run_replayed(w.scene, kChairQuery, log);
  const auto& t = rep.result.trace;
  ASSERT_TRUE(t.finished()) << t.to_jsonl();
  EXPECT_EQ(rep.replay_left, 0u);
  EXPECT_EQ(t.to_jsonl(), rec.result.trace.to_jsonl());

  const auto* first = find_step(t, "object_filter", 0);
  const auto* retry = find_step(t, "object_filter", 1);
  ASSERT_TRUE(first && retry);
  EXPECT_EQ(first->observation, "object_filtered_image_files.json, 0");
  EXPECT_NE(retry->observation, "object_filtered_image_files.json, 0");
  EXPECT_EQ(retry->detail["threshold"], 0.3);
  EXPECT_EQ(threshold_violation(t, 0.3), "");
  for (const char* tool : {"argmax_image_and_seg_id", "vlm_frame_expansion", "segment_all_target_object", "centroid_complete"}) {
    const auto* st = find_step(t, tool);
    ASSERT_TRUE(st) << tool;
    EXPECT_EQ(std::get<ToolCall>(st->action).args["threshold"], 0.3) << tool;
    EXPECT_EQ(st->effective_config["threshold"], 0.3) << tool;
  }
  EXPECT_GE(iou_with_box(rep.result.bbox, w.gt, 1), 0.9);
}

TEST(Scripted, SceneFilterRejectingAllRevertsToCoarseResult) {
  const auto& w = three_boxes();
  auto tk = make_oracle_toolkit(w.gt);
  tk.chat = std::make_shared<SceneRejectingChat>(tk.chat);
  const auto log = temp_log("reject");
  ASSERT_TRUE(run_recorded(w.scene, kChairQuery, tk, log).result.trace.finished());
  const auto rep = run_replayed(w.scene, kChairQuery, log);
  const auto& t = rep.result.trace;
  ASSERT_TRUE(t.finished()) << t.to_jsonl();
  EXPECT_EQ(find_step(t, "vlm_filter")->observation, "vlm_filtered_image_files.json, 0");
  const auto* score = find_step(t, "vlm_score");
  EXPECT_EQ(std::get<ToolCall>(score->action).args["image_files_path"], "object_filtered_image_files.json");
  EXPECT_NE(score->thought.find("revert"), std::string::npos);
  EXPECT_GE(iou_with_box(rep.result.bbox, w.gt, 1), 0.9);
}

TEST(Scripted, UnusableCentroidFallsBackToTrackedFrames) {
  const auto& w = three_boxes();
  for (bool empty : {false, true}) {
    const auto log = temp_log(empty ? "empty_cloud" : "nan_cloud");
    ASSERT_TRUE(run_recorded(w.scene, kChairQuery, make_oracle_toolkit(w.gt), log, poison_initial_cloud(empty))
                    .result.trace.finished());
    const auto rep = run_replayed(w.scene, kChairQuery, log, poison_initial_cloud(empty));
    const auto& t = rep.result.trace;
    ASSERT_TRUE(t.finished()) << t.to_jsonl();
    const auto* cc = find_step(t, "centroid_complete");
    ASSERT_TRUE(cc);
    EXPECT_EQ(cc->error, Errc::NonFiniteCentroid);
    const auto* final_build = find_step(t, "reconstruct_point_cloud", 1);
    ASSERT_TRUE(final_build);
    EXPECT_EQ(std::get<ToolCall>(final_build->action).args["masks_path"], "final_masks.json");
    EXPECT_FALSE(final_build->error);
    EXPECT_GE(iou_with_box(rep.result.bbox, w.gt, 1), 0.8);
  }
}

TEST(Scripted, MarkerFailureFallsThroughToNextRankedFrame) {
  const auto& w = three_boxes();
  Session probe(w.scene, kChairQuery, make_oracle_toolkit(w.gt), {});
  ASSERT_TRUE(run_scripted(probe).trace.finished());
  const int top = probe.artifact("reference_image_mask_results.json")["frame"].get<int>();

  auto tk = make_oracle_toolkit(w.gt);
  tk.segmenter = std::make_shared<BlindSegmenter>(tk.segmenter, std::set<int>{top}, 1);
  Session s(w.scene, kChairQuery, tk, {});
  const auto r = run_scripted(s);
  ASSERT_TRUE(r.trace.finished());
  const auto* pick = find_step(r.trace, "argmax_image_and_seg_id");
  ASSERT_EQ(pick->detail["skipped"].size(), 1u);
  EXPECT_EQ(pick->detail["skipped"][0]["error"], "NoInstances");
  EXPECT_NE(s.artifact("reference_image_mask_results.json")["frame"].get<int>(), top);
}

TEST(Scripted, UnrecoverableRunsAbort) {
  const auto& w = three_boxes();
  {
    auto tk = make_oracle_toolkit(w.gt);
    tk.segmenter = std::make_shared<BlindSegmenter>(tk.segmenter, std::set<int>{}, -1);
    Session s(w.scene, kChairQuery, tk, {});
    const auto r = run_scripted(s);
    ASSERT_TRUE(r.trace.aborted());
    EXPECT_EQ(r.trace.steps.back().error, Errc::NoMatch);
    EXPECT_FALSE(r.bbox);
  }
  {
    Session s(w.scene, "the sofa by the window", make_oracle_toolkit(w.gt), {});
    const auto r = run_scripted(s);
    ASSERT_TRUE(r.trace.aborted());
    EXPECT_LE(r.trace.steps.size(), 15u);
  }
}

// ---- Planner loop ----------------------------------------------------------

TEST(React, ReferenceTraceReplaysInOrder) {
  const auto& w = pillow_scene();
  ReplayChat planner(ReplayLog::load(samples_dir() / "replay" / "scene0435_00_planner.json"));
  Session s(w.scene, w.gt.queries.front().text, make_oracle_toolkit(w.gt), {});
  const auto r = run_react(s, planner, 30);
  ASSERT_TRUE(r.trace.finished()) << r.trace.to_jsonl();
  EXPECT_EQ(r.trace.tool_sequence(), reference_tool_order());
  for (const auto& st : r.trace.steps) EXPECT_FALSE(st.error) << st.observation;
  EXPECT_FALSE(r.trace.steps.front().thought.empty());
  EXPECT_GE(iou_with_box(r.bbox, w.gt, 4), 0.9);
}

TEST(React, SystemPromptCarriesSkillAndTools) {
  const auto& w = three_boxes();
  auto planner = scripted_planner({"Thought: nothing to do.\nAction: Abort[test]"});
  Session s(w.scene, kChairQuery, make_oracle_toolkit(w.gt), {});
  const auto r = run_react(s, *planner, 5);
  ASSERT_TRUE(r.trace.aborted());
  EXPECT_EQ(std::get<Abort>(r.trace.steps.back().action).reason, "test");
  const auto& req = planner->requests.front();
  ASSERT_GE(req.turns.size(), 2u);
  const std::string sys = req.turns[0].parts.at(0).data;
  EXPECT_NE(sys.find("Temporal Expansion"), std::string::npos);
  EXPECT_NE(sys.find("centroid_complete"), std::string::npos);
  EXPECT_NE(req.turns[1].parts.at(0).data.find(kChairQuery), std::string::npos);
}

TEST(React, UnknownToolGetsAnotherTurn) {
  const auto& w = three_boxes();
  auto planner = scripted_planner({"Action: fly_away({})", "Action: Abort[no such tool]"});
  Session s(w.scene, kChairQuery, make_oracle_toolkit(w.gt), {});
  const auto r = run_react(s, *planner, 5);
  ASSERT_EQ(r.trace.steps.size(), 2u);
  EXPECT_EQ(r.trace.steps[0].error, Errc::UnknownTool);
  EXPECT_TRUE(r.trace.aborted());
  const auto& second = planner->requests.at(1);
  EXPECT_NE(second.turns.back().parts.at(0).data.find("Error[UnknownTool]"), std::string::npos);
}

TEST(React, ParseErrorsRetryOncePerStep) {
  const auto& w = three_boxes();
  auto planner = scripted_planner({"Action: nonsense", "Action: read_image_files({\"scene_id\": \"three_boxes\"})",
                                   "still nonsense", "more nonsense", "Finish[ok]"});
  Session s(w.scene, kChairQuery, make_oracle_toolkit(w.gt), {});
  const auto r = run_react(s, *planner, 5);
  ASSERT_EQ(r.trace.steps.size(), 3u);
  EXPECT_FALSE(r.trace.steps[0].error);
  EXPECT_EQ(r.trace.steps[1].error, Errc::ActionParseError);
  EXPECT_TRUE(r.trace.finished());
  EXPECT_EQ(r.trace.tool_sequence(), std::vector<std::string>{"read_image_files"});
  EXPECT_EQ(planner->requests.size(), 5u);
}

TEST(React, StepBudgetAborts) {
  const auto& w = three_boxes();
  auto planner = scripted_planner({"Action: read_image_files({\"scene_id\": \"three_boxes\"})"});
  Session s(w.scene, kChairQuery, make_oracle_toolkit(w.gt), {});
  const auto r = run_react(s, *planner, 3);
  ASSERT_EQ(r.trace.steps.size(), 4u);
  EXPECT_TRUE(r.trace.aborted());
  EXPECT_EQ(r.trace.steps.back().error, Errc::StepBudget);
  EXPECT_EQ(code_of([&] { run_react(s, *planner, 0); }), Errc::InvalidConfig);
}

TEST(React, PlannerFailureAborts) {
  const auto& w = three_boxes();
  FnChat planner([](const ChatRequest&) -> std::string { throw Error(Errc::ChatUnavailable, "down"); });
  Session s(w.scene, kChairQuery, make_oracle_toolkit(w.gt), {});
  const auto r = run_react(s, planner, 5);
  ASSERT_EQ(r.trace.steps.size(), 1u);
  EXPECT_EQ(r.trace.steps[0].error, Errc::PlannerUnavailable);
  EXPECT_FALSE(r.bbox);
}

TEST(Trace, JsonLinesCarryConfigSnapshots) {
  const auto& w = three_boxes();
  Session s(w.scene, kChairQuery, make_oracle_toolkit(w.gt), {});
  const auto r = run_scripted(s);
  std::istringstream is(r.trace.to_jsonl());
  int n = 0;
  for (std::string line; std::getline(is, line); ++n) {
    const auto j = json::parse(line);
    EXPECT_EQ(j["step"], n + 1);
    EXPECT_TRUE(j["effective_config"].contains("eps"));
    EXPECT_EQ(j["status"], "ok");
    EXPECT_NO_THROW(parse_action(j["action"].get<std::string>()));
  }
  EXPECT_EQ(n, 14);
}
