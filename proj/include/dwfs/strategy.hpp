#pragma once

#include <optional>
#include <span>
#include <string_view>

namespace dwfs {

enum class Strategy {
  Repackaging,
  Reassembly,
  Manifest,
  Alignment,
  JunkCode,
  ControlFlow,
  MemberReorder,
  StringEncrypt,
  IdentifierRename,
  ClassRename,
  Reflection,
};

enum class StrategyClass { Trivial, NonTrivial };

std::string_view to_string(Strategy s);
std::string_view to_string(StrategyClass c);
std::optional<Strategy> find_strategy(std::string_view id);
/// Throws Error{Argument} for unknown ids.
Strategy parse_strategy(std::string_view id);
StrategyClass strategy_class(Strategy s);

std::span<const Strategy> all_strategies();
/// The seven conditions a default corpus is generated with.
std::span<const Strategy> default_strategies();

}  // namespace dwfs
