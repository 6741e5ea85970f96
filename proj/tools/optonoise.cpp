#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "optonoise/commands.hpp"

namespace {

enum Exit : int { ok = 0, internal = 1, usage = 2, refused = 3, verification_failed = 4 };

std::filesystem::path output_path(const std::string& out) {
  std::filesystem::path p(out);
  const char* dir = std::getenv("OPTONOISE_OUTPUT_DIR");
  if (dir && *dir && p.is_relative()) p = std::filesystem::path(dir) / p;
  return p;
}

void emit(const std::string& text, const std::string& out) {
  if (out.empty()) {
    std::cout << text << std::flush;
    return;
  }
  const auto path = output_path(out);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw optonoise::usage_error("cannot write output file '" + path.string() + "'");
  f << text;
  if (!f) throw std::runtime_error("write to '" + path.string() + "' failed");
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "optonoise: warning: " << w << '\n';
}

int run(const std::string& mode, const optonoise::RunConfig& rc) {
  using namespace optonoise;
  if (mode == "verify") {
    if (rc.format.value_or(OutputFormat::json) != OutputFormat::json) {
      throw usage_error("verify writes a JSON report; --format csv is not available");
    }
    const auto report = cmd_verify(rc);
    print_warnings(report.warnings);
    emit(to_json(report).dump(2) + "\n", rc.out_path);
    return report.overall ? ok : verification_failed;
  }

  Table t;
  if (mode == "spectra") t = cmd_spectra(rc);
  else if (mode == "fig1") t = cmd_fig1(rc);
  else if (mode == "optimize") t = cmd_optimize(rc);
  else throw usage_error("unknown mode '" + mode + "'");
  print_warnings(t.warnings);

  std::ostringstream os;
  if (rc.format.value_or(OutputFormat::csv) == OutputFormat::csv) write_csv(os, t);
  else os << to_json(t).dump(2) << '\n';
  emit(os.str(), rc.out_path);
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Optomechanical feedback noise spectra: sweeps, squeezing curves, gain optimization "
               "and oracle verification."};
  std::string config_path, out, format, lambda, mode = "spectra";
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  app.add_option("--config", config_path, "key=value configuration file")->check(CLI::ExistingFile);
  app.add_option("--set", sets, "Override one configuration key (KEY=VALUE); repeatable");
  app.add_option("--out", out, "Output file (default stdout); relative paths honor OPTONOISE_OUTPUT_DIR");
  app.add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
  auto* seed_opt = app.add_option("--seed", seed, "Monte Carlo seed");
  app.add_option("--mode", mode, "spectra, fig1, optimize or verify")
      ->check(CLI::IsMember({"spectra", "fig1", "optimize", "verify"}));
  app.add_option("--lambda", lambda, "off, fixed:VALUE, opt or opt-at:OMEGA");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? ok : usage;
  }

  try {
    optonoise::RunConfig rc;
    if (!config_path.empty()) optonoise::apply_config_file(rc, config_path);
    for (const auto& s : sets) optonoise::apply_assignment(rc, s);
    if (!out.empty()) rc.out_path = out;
    if (!format.empty()) rc.format = optonoise::parse_format(format);
    if (*seed_opt) rc.seed = seed;
    if (!lambda.empty()) rc.feedback = optonoise::parse_lambda(lambda);
    return run(mode, rc);
  } catch (const optonoise::usage_error& e) {
    std::cerr << "optonoise: usage error: " << e.what() << '\n';
    return usage;
  } catch (const optonoise::config_error& e) {
    std::cerr << "optonoise: invalid parameter: " << e.what() << '\n';
    return usage;
  } catch (const optonoise::frequency_domain_error& e) {
    std::cerr << "optonoise: usage error: " << e.what() << '\n';
    return usage;
  } catch (const optonoise::validity_error& e) {
    std::cerr << "optonoise: refused: " << e.what() << '\n';
    return refused;
  } catch (const optonoise::loop_singularity& e) {
    std::cerr << "optonoise: refused: " << e.what() << '\n';
    return refused;
  } catch (const std::exception& e) {
    std::cerr << "optonoise: internal error: " << e.what() << '\n';
    return internal;
  }
}
