#include "dwfs/strategy.hpp"

#include <array>
#include <string>

#include "dwfs/common.hpp"

namespace dwfs {

namespace {

struct Entry {
  Strategy strategy;
  std::string_view id;
  StrategyClass cls;
};

constexpr std::array<Entry, 11> kTable{{
    {Strategy::Repackaging, "repackaging", StrategyClass::Trivial},
    {Strategy::Reassembly, "reassembly", StrategyClass::Trivial},
    {Strategy::Manifest, "manifest", StrategyClass::Trivial},
    {Strategy::Alignment, "alignment", StrategyClass::Trivial},
    {Strategy::JunkCode, "junk-code", StrategyClass::NonTrivial},
    {Strategy::ControlFlow, "control-flow", StrategyClass::NonTrivial},
    {Strategy::MemberReorder, "member-reorder", StrategyClass::NonTrivial},
    {Strategy::StringEncrypt, "string-encrypt", StrategyClass::NonTrivial},
    {Strategy::IdentifierRename, "identifier-rename", StrategyClass::NonTrivial},
    {Strategy::ClassRename, "class-rename", StrategyClass::NonTrivial},
    {Strategy::Reflection, "reflection", StrategyClass::NonTrivial},
}};

constexpr std::array<Strategy, 11> kAll{
    Strategy::Repackaging,   Strategy::Reassembly,    Strategy::Manifest,         Strategy::Alignment,
    Strategy::JunkCode,      Strategy::ControlFlow,   Strategy::MemberReorder,    Strategy::StringEncrypt,
    Strategy::IdentifierRename, Strategy::ClassRename, Strategy::Reflection};

constexpr std::array<Strategy, 7> kDefault{Strategy::Manifest,      Strategy::JunkCode,
                                           Strategy::ControlFlow,   Strategy::MemberReorder,
                                           Strategy::StringEncrypt, Strategy::IdentifierRename,
                                           Strategy::Reflection};

const Entry& entry(Strategy s) {
  for (const auto& e : kTable)
    if (e.strategy == s) return e;
  return kTable[0];
}

}  // namespace

std::string_view to_string(Strategy s) { return entry(s).id; }

std::string_view to_string(StrategyClass c) { return c == StrategyClass::Trivial ? "trivial" : "non-trivial"; }

std::optional<Strategy> find_strategy(std::string_view id) {
  for (const auto& e : kTable)
    if (e.id == id) return e.strategy;
  return std::nullopt;
}

Strategy parse_strategy(std::string_view id) {
  if (auto s = find_strategy(id)) return *s;
  fail(ErrorKind::Argument, "unknown obfuscation strategy '" + std::string(id) + "'");
}

StrategyClass strategy_class(Strategy s) { return entry(s).cls; }

std::span<const Strategy> all_strategies() { return kAll; }
std::span<const Strategy> default_strategies() { return kDefault; }

}  // namespace dwfs
