// bpeq: batch BPE quantification from the command line.

#include <csignal>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "bpeq/pipeline.hpp"
#include "bpeq/reader_server.hpp"
#include "bpeq/report.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCaseFailed = 1;
constexpr int kExitBadConfig = 2;

struct CommonOptions {
  std::string manifest;
  std::string config;
  std::string out;
  int jobs = 1;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool manifest_required) {
  auto* m = cmd->add_option("--manifest", o.manifest, "Case manifest (JSON)");
  if (manifest_required) m->required();
  cmd->add_option("--config", o.config, "Pipeline configuration (JSON); defaults apply when omitted");
  cmd->add_option("--out", o.out, "Output directory (overrides output_dir)");
  cmd->add_option("--jobs", o.jobs, "Cases processed in parallel")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", o.seed, "Seed (overrides the config seed)");
}

bpeq::PipelineConfig load_config(const CommonOptions& o) {
  bpeq::PipelineConfig c = o.config.empty() ? bpeq::PipelineConfig{} : bpeq::PipelineConfig::load(o.config);
  if (!o.out.empty()) c.output_dir = o.out;
  if (o.seed) {
    c.seed = *o.seed;
    c.fcm.seed = *o.seed;
  }
  return c;
}

int report_batch(const std::string& stage, const bpeq::BatchResult& r) {
  std::cout << stage << ": " << r.succeeded << " succeeded, " << r.failures.size() << " failed\n";
  for (const auto& f : r.failures) {
    std::cerr << "  " << f.case_id << ": " << f.message << "\n";
  }
  return r.ok() ? kExitOk : kExitCaseFailed;
}

bpeq::ReaderServer* g_server = nullptr;

void on_signal(int) {
  if (g_server != nullptr) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Background parenchymal enhancement quantification from breast DCE-MRI"};
  app.require_subcommand(1);

  CommonOptions common;

  auto* preprocess = app.add_subcommand("preprocess", "Register S1 to S0 and resample every case");
  add_common(preprocess, common, true);

  auto* segment = app.add_subcommand("segment", "Segment breast and FGT for every case");
  add_common(segment, common, true);
  std::string method = "fcm";
  std::string operator_label = "default";
  std::optional<double> prob_threshold;
  segment->add_option("--method", method, "fcm or dl")->check(CLI::IsMember({"fcm", "dl"}));
  segment->add_option("--operator", operator_label, "Label under which this run's masks are stored");
  segment->add_option("--prob-threshold", prob_threshold, "FCM membership cutoff for this operator");

  auto* metrics = app.add_subcommand("metrics", "Compute BPE metrics for segmented cases");
  add_common(metrics, common, true);
  std::vector<std::string> selections;
  metrics->add_option("--select", selections, "method/operator to include (default: all found)");

  auto* report = app.add_subcommand("report", "Agreement and correlation report");
  add_common(report, common, false);
  std::vector<std::string> metrics_csvs;
  std::string labels_csv;
  std::string scores_csv;
  bool no_dice = false;
  report->add_option("--metrics", metrics_csvs, "Metrics CSV(s) (default: <out>/metrics/metrics.csv)");
  report->add_option("--labels", labels_csv, "Labels CSV (default: qualitative grades from the manifest)");
  report->add_option("--scores", scores_csv, "Reader-study export CSV");
  report->add_flag("--no-dice", no_dice, "Skip mask Dice between methods");

  auto* serve = app.add_subcommand("reader-serve", "Serve the blinded reader study over HTTP");
  std::string study_path;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::optional<std::uint64_t> study_seed;
  serve->add_option("--study", study_path, "Reader study configuration (JSON)")->required();
  serve->add_option("--host", host, "Listen address");
  serve->add_option("--port", port, "Listen port (0 picks a free one)");
  serve->add_option("--seed", study_seed, "Side-assignment seed (overrides the study file)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitBadConfig;
  }

  try {
    if (serve->parsed()) {
      bpeq::StudyConfig sc;
      try {
        sc = bpeq::StudyConfig::load(study_path);
      } catch (const bpeq::InvalidArgument& e) {
        std::cerr << "invalid study configuration: " << e.what() << "\n";
        return kExitBadConfig;
      }
      if (study_seed) sc.seed = *study_seed;
      bpeq::ReaderStudy study(std::move(sc));
      bpeq::ReaderServer server(study);
      const int bound = server.bind(host, port);
      std::cout << "reader study listening on http://" << host << ":" << bound << std::endl;
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      server.serve();
      g_server = nullptr;
      return kExitOk;
    }

    const bpeq::PipelineConfig config = load_config(common);
    std::optional<bpeq::Manifest> manifest;
    if (!common.manifest.empty()) manifest = bpeq::Manifest::load(common.manifest);

    if (preprocess->parsed()) {
      return report_batch("preprocess", bpeq::run_preprocess(*manifest, config, common.jobs));
    }
    if (segment->parsed()) {
      bpeq::SegmentOptions opts{bpeq::parse_segment_method(method), operator_label, prob_threshold};
      return report_batch("segment " + method + "/" + operator_label,
                          bpeq::run_segment(*manifest, config, opts, common.jobs));
    }
    if (metrics->parsed()) {
      if (selections.empty()) selections = bpeq::discover_selections(config.output_dir);
      if (selections.empty()) {
        std::cerr << "metrics: no segmentations found under " << config.output_dir.string() << "/segment\n";
        return kExitCaseFailed;
      }
      const auto mb = bpeq::run_metrics(*manifest, config, selections, common.jobs);
      std::cout << "wrote " << bpeq::layout::metrics_csv(config.output_dir).string() << "\n";
      return report_batch("metrics", mb.batch);
    }
    if (report->parsed()) {
      bpeq::ReportRequest req;
      for (const auto& p : metrics_csvs) req.metrics_csvs.emplace_back(p);
      if (!labels_csv.empty()) req.labels_csv = labels_csv;
      if (!scores_csv.empty()) req.scores_csv = scores_csv;
      req.include_dice = !no_dice;
      const auto r = bpeq::run_report(manifest ? &*manifest : nullptr, config, req);
      std::cout << bpeq::render_report_text(r);
      return r.at("failures").empty() ? kExitOk : kExitCaseFailed;
    }
  } catch (const bpeq::ConfigError& e) {
    std::cerr << "invalid configuration: " << e.what() << "\n";
    return kExitBadConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCaseFailed;
  }
  return kExitOk;
}
