#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "scone/config.hpp"
#include "scone/errors.hpp"
#include "scone/experiment.hpp"

using namespace scone;

namespace {

// Turns leftover `--key value` / `--key=value` tokens into settings. A key
// with no value is read as a boolean switch.
Settings overrides(const std::vector<std::string>& args) {
  Settings out;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("--", 0) != 0) throw ConfigError("unexpected argument '" + a + "'");
    const std::string body = a.substr(2);
    if (const auto eq = body.find('='); eq != std::string::npos) {
      out.emplace_back(body.substr(0, eq), body.substr(eq + 1));
    } else if (i + 1 < args.size() && args[i + 1].rfind("--", 0) != 0) {
      out.emplace_back(body, args[++i]);
    } else {
      out.emplace_back(body, "true");
    }
  }
  return out;
}

ExitCode dispatch(const RunConfig& cfg) {
  switch (cfg.kind) {
    case RunKind::MarginSweep: return execute_sweep(cfg);
    case RunKind::Propcheck: return execute_propcheck(cfg);
    case RunKind::Gradcheck: return execute_gradcheck(cfg);
    default: return execute_run(cfg);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Margin-constrained joint OOD generalization and detection"};
  app.require_subcommand(1);

  std::string config_path;
  struct Command {
    CLI::App* app;
    std::optional<RunKind> kind;
  };
  std::vector<Command> commands;
  auto add = [&](const char* name, const char* help, std::optional<RunKind> kind) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "key = value config file");
    sub->allow_extras();
    commands.push_back({sub, kind});
  };
  add("run", "train and evaluate one model (--kind synth|idx|margin-sweep|propcheck|gradcheck)", std::nullopt);
  add("sweep", "train over the eta grid and select the margin", RunKind::MarginSweep);
  add("propcheck", "check the margin proposition on analytic and trained cases", RunKind::Propcheck);
  add("gradcheck", "compare autodiff gradients with finite differences", RunKind::Gradcheck);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::Config);
  }

  try {
    for (const auto& c : commands) {
      if (!c.app->parsed()) continue;
      Settings settings = config_path.empty() ? Settings{} : read_settings_file(config_path);
      const Settings extra = overrides(c.app->remaining());
      settings.insert(settings.end(), extra.begin(), extra.end());
      if (c.kind == RunKind::MarginSweep) {
        // An idx sweep keeps the idx kind so the IDX data is loaded.
        RunConfig cfg = build_config(settings, c.kind);
        if (cfg.kind != RunKind::Idx) cfg.kind = RunKind::MarginSweep;
        return static_cast<int>(execute_sweep(cfg));
      }
      if (c.kind) {
        RunConfig cfg = build_config(settings, c.kind);
        cfg.kind = *c.kind;
        return static_cast<int>(dispatch(cfg));
      }
      return static_cast<int>(dispatch(build_config(settings)));
    }
  } catch (const ConfigError& e) {
    std::cerr << "scone: config error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::Config);
  } catch (const FormatError& e) {
    std::cerr << "scone: bad input file: " << e.what() << '\n';
    return static_cast<int>(ExitCode::Config);
  } catch (const std::exception& e) {
    std::cerr << "scone: " << e.what() << '\n';
    return static_cast<int>(ExitCode::Failure);
  }
  return static_cast<int>(ExitCode::Failure);
}
