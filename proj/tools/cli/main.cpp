// fedgrid command-line front end. Talks to the library only through the C API.
#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "fedgrid/fedgrid.h"

namespace {

void print_log(const char* message, void* user) {
  if (!*static_cast<bool*>(user)) std::fprintf(stderr, "%s\n", message);
}

int fail(const char* command, fedgrid_status status) {
  std::fprintf(stderr, "fedgrid %s failed (%s): %s\n", command, fedgrid_status_name(status), fedgrid_last_error());
  return static_cast<int>(status);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated FDIA detection with Paillier-protected aggregation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", fedgrid_version());

  std::string config_path;
  std::string workspace;
  bool full = false;
  bool quiet = false;
  app.add_option("-c,--config", config_path, "Experiment config (JSON), relative to the workspace")->required();
  app.add_option("-w,--workspace", workspace, "Workspace root (default: $FEDGRID_WORKSPACE or the current directory)");
  app.add_flag("--full", full, "Use the full dataset sizes instead of the desk profile");
  app.add_flag("-q,--quiet", quiet, "Suppress progress messages");

  unsigned key_bits = 0;
  auto* keygen = app.add_subcommand("keygen", "Generate the trustee's Paillier keypair");
  keygen->add_option("--bits", key_bits, "Bits per prime (default: key_bits from the config)");

  auto* generate = app.add_subcommand("generate-data", "Generate per-client normal and attacked datasets");

  bool with_ideal = false;
  auto* train_local = app.add_subcommand("train-local", "Train one model per client on local data only");
  train_local->add_flag("--with-ideal", with_ideal, "Also train the pooled-data reference model");

  auto* train_fed = app.add_subcommand("train-federated", "Run encrypted federated training");
  auto* evaluate = app.add_subcommand("evaluate", "Score every trained checkpoint on the client test sets");

  std::string model_kind = "federated";
  auto* sweep = app.add_subcommand("noise-sweep", "Evaluate a trained model under measurement noise");
  sweep->add_option("--model", model_kind, "Which checkpoints to sweep")
      ->check(CLI::IsMember({"federated", "local", "ideal"}));

  auto* report = app.add_subcommand("report", "Render JSON and CSV reports from logs and evaluations");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return FEDGRID_ERR_CONFIG;
  }

  const char* command = app.get_subcommands().front()->get_name().c_str();
  fedgrid_experiment* exp = nullptr;
  fedgrid_status status =
      fedgrid_experiment_open(config_path.c_str(), workspace.empty() ? nullptr : workspace.c_str(), full ? 1 : 0, &exp);
  if (status != FEDGRID_OK) return fail(command, status);
  fedgrid_experiment_set_logger(exp, print_log, &quiet);

  if (*keygen) status = fedgrid_keygen(exp, key_bits);
  else if (*generate) status = fedgrid_generate_data(exp);
  else if (*train_local) status = fedgrid_train_local(exp, with_ideal ? 1 : 0);
  else if (*train_fed) status = fedgrid_train_federated(exp);
  else if (*evaluate) status = fedgrid_evaluate(exp);
  else if (*sweep) status = fedgrid_noise_sweep(exp, model_kind.c_str());
  else if (*report) status = fedgrid_report(exp);

  if (status == FEDGRID_OK && !quiet) {
    char dir[4096];
    if (fedgrid_experiment_output_dir(exp, dir, sizeof dir, nullptr) == FEDGRID_OK)
      std::fprintf(stderr, "%s done; outputs under %s\n", command, dir);
  }
  fedgrid_experiment_close(exp);
  return status == FEDGRID_OK ? 0 : fail(command, status);
}
