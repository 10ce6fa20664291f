#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "recovermark/forensics.hpp"
#include "recovermark/training.hpp"

namespace recovermark {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything a run reads from its config file.
struct RunConfig {
  TrainConfig train;
  EvaluationOptions eval;
  /// Evaluation attacks by name, in file order ("attack.<name> = <chain>").
  std::vector<std::pair<std::string, std::string>> attacks;
  /// External attack programs ("plugin.<name> = <path>").
  std::map<std::string, std::string> plugins;
  std::vector<double> capacity_fractions = {0.1, 0.3, 0.5, 0.7};

  /// Sorted key=value rendering of every setting, defaults included.
  std::string canonical() const;
  std::string digest() const;

  std::vector<NamedAttack> attack_list() const;
  AttackContext attack_context(const RegenerationProxy* regeneration) const;
};

/// Flat `key = value` text; '#' starts a comment. Unknown keys are collected
/// and reported together.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Default evaluation attacks used when a config lists none.
std::vector<std::pair<std::string, std::string>> default_attacks();

}  // namespace recovermark
