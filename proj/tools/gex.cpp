// SPDX-License-Identifier: Apache-2.0
// Command line front end: gex workspace|retarget|decode|serve|replay.

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <iterator>
#include <thread>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "gex/gateway.hpp"
#include "gex/service.hpp"

namespace {

using namespace gex;
using namespace gex::gateway;

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

void configure_logging() {
  const char* level = std::getenv("GEX_LOG");
  spdlog::set_level(level ? spdlog::level::from_str(level) : spdlog::level::info);
  spdlog::set_pattern("[%H:%M:%S.%e] [%l] %v");
}

struct Options {
  std::string config;
  // workspace
  std::string model, finger = "thumb", out;
  std::size_t n = 100000;
  std::uint64_t seed = 7;
  // retarget
  std::string glove, hand, in;
  // decode
  std::vector<std::string> hex;
  std::string file;
  bool binary = false;
  // serve
  int port = -1;
  // replay
  std::string gesture, report, summary;
};

int cmd_workspace(const Options& o) {
  std::string path = o.model;
  if (path == "gx11" || path == "ex12") {
    const GatewayConfig c = load_config_file(o.config);
    path = (path == "gx11" ? c.hand_model_path : c.glove_model_path).string();
  }
  const HandModel m = load_model_file(path);
  const auto r = run_workspace(m, o.finger, o.n, o.seed, o.out);
  std::cout << "workspace " << m.name << "/" << o.finger << ": " << r.points << " points, hull volume "
            << r.hull_volume * 1e6 << " cm^3 -> " << o.out << "\n";
  return 0;
}

int cmd_retarget(const Options& o) {
  GatewayConfig c;
  RetargetConfig rc = RetargetConfig::defaults();
  HandModel glove, hand;
  if (!o.config.empty()) {
    c = load_config_file(o.config);
    glove = c.glove_model;
    hand = c.hand_model;
    rc = c.session.retarget;
  }
  if (!o.glove.empty()) glove = load_model_file(o.glove);
  if (!o.hand.empty()) hand = load_model_file(o.hand);
  if (glove.fingers.empty() || hand.fingers.empty()) throw ValidationError("retarget needs --config or both --glove and --hand");
  const auto r = run_retarget(glove, hand, rc, o.in, o.out);
  std::cout << "retargeted " << r.frames << " frames -> " << o.out << "\n";
  std::cout << "final thumb-index distance: glove " << r.pinch.glove_distance * 1e3 << " mm, hand "
            << r.pinch.hand_distance * 1e3 << " mm" << (r.pinch.is_pinch ? " (pinch)" : "") << "\n";
  return 0;
}

int cmd_decode(const Options& o) {
  DecodeResult r;
  if (!o.file.empty()) {
    std::ifstream in(o.file, std::ios::binary);
    if (!in) throw NotFoundError("cannot open " + o.file);
    const std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    r = o.binary ? run_decode(dxl::Bytes(raw.begin(), raw.end()), std::cout) : run_decode_hex(raw, std::cout);
  } else if (!o.hex.empty()) {
    std::string joined;
    for (const auto& h : o.hex) joined += h + " ";
    r = run_decode_hex(joined, std::cout);
  } else {
    const std::string raw((std::istreambuf_iterator<char>(std::cin)), std::istreambuf_iterator<char>());
    r = o.binary ? run_decode(dxl::Bytes(raw.begin(), raw.end()), std::cout) : run_decode_hex(raw, std::cout);
  }
  if (!r.ok()) spdlog::warn("{} bad frame(s)", r.bad);
  return r.ok() ? 0 : 1;
}

int cmd_serve(const Options& o) {
  GatewayConfig c = load_config_file(o.config);
  if (o.port >= 0) c.service.port = static_cast<std::uint16_t>(o.port);
  Service svc(std::move(c));
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  svc.start();
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(50));
  spdlog::info("shutting down");
  svc.stop();
  const auto t = svc.tick_stats();
  spdlog::info("tick interval mean {:.3f} ms, p95 deviation {:.3f} ms, rms {:.3f} ms", t.mean_interval * 1e3,
               t.p95_deviation * 1e3, t.rms_jitter * 1e3);
  return 0;
}

int cmd_replay(const Options& o) {
  const GatewayConfig c = load_config_file(o.config);
  const std::string summary = o.summary.empty() ? o.report + ".summary.json" : o.summary;
  const ReplaySummary s = run_replay(c, o.gesture, o.report, summary);
  std::cout << "replayed " << s.ticks << " ticks (" << s.duration << " s) -> " << o.report << "\n";
  std::cout << "engaged fingers: " << s.engaged_fingers() << ", grasp persistence " << s.grasp_persistence()
            << " s\n";
  for (std::size_t f = 0; f < 3; ++f) {
    std::cout << "  " << s.fingers[f] << ": " << (s.ever_engaged[f] ? "engaged" : "free") << ", contact "
              << s.longest_contact[f] << " s, max torque " << s.max_feedback_torque[f] << " N·m\n";
  }
  std::cout << "summary -> " << summary << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"GEX glove-to-hand teleoperation tools"};
  app.require_subcommand(1);
  Options o;

  auto* ws = app.add_subcommand("workspace", "Sample fingertip positions and report the hull volume");
  ws->add_option("--model", o.model, "Model file, or gx11/ex12 resolved through --config")->required();
  ws->add_option("--config", o.config, "Config file (for named models)")->check(CLI::ExistingFile);
  ws->add_option("--finger", o.finger, "Finger name")->capture_default_str();
  ws->add_option("-n,--samples", o.n, "Number of samples")->capture_default_str()->check(CLI::PositiveNumber);
  ws->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  ws->add_option("--out", o.out, "CSV output")->required();

  auto* rt = app.add_subcommand("retarget", "Retarget a recorded glove gesture offline");
  rt->add_option("--config", o.config, "Config file (models and retarget section)")->check(CLI::ExistingFile);
  rt->add_option("--glove", o.glove, "Glove model file (overrides config)");
  rt->add_option("--hand", o.hand, "Hand model file (overrides config)");
  rt->add_option("--in", o.in, "Gesture JSONL")->required();
  rt->add_option("--out", o.out, "Hand trajectory JSONL")->required();

  auto* dc = app.add_subcommand("decode", "Dump protocol frames from hex (arguments, --file or stdin)");
  dc->add_option("hex", o.hex, "Hex bytes");
  dc->add_option("--file", o.file, "Input file");
  dc->add_flag("--binary", o.binary, "Input is raw bytes instead of hex text");

  auto* sv = app.add_subcommand("serve", "Run the live session with the /ws endpoint");
  sv->add_option("--config", o.config, "Config file")->required()->check(CLI::ExistingFile);
  sv->add_option("--port", o.port, "Override the configured port")->check(CLI::Range(0, 65535));

  auto* rp = app.add_subcommand("replay", "Replay a gesture headlessly against the configured scene");
  rp->add_option("--config", o.config, "Config file")->required()->check(CLI::ExistingFile);
  rp->add_option("--gesture", o.gesture, "Gesture JSONL")->required();
  rp->add_option("--out", o.report, "Per-tick report JSONL")->required();
  rp->add_option("--summary", o.summary, "Summary JSON (default: <out>.summary.json)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*ws) return cmd_workspace(o);
    if (*rt) return cmd_retarget(o);
    if (*dc) return cmd_decode(o);
    if (*sv) return cmd_serve(o);
    if (*rp) return cmd_replay(o);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
