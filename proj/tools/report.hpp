#pragma once

#include "golden.hpp"

#include "nsp/capacity.hpp"
#include "nsp/oracle.hpp"

#include <json.hpp>

#include <string>

namespace nsp::cli {

inline constexpr int kSchemaVersion = 1;

nlohmann::json to_json(const LiftingParams& lp);
nlohmann::json to_json(const CapacityResult& r);
nlohmann::json to_json(const GradientCheck& g);
nlohmann::json to_json(const ModuloMReport& m);
nlohmann::json to_json(const OrderingReport& o);
nlohmann::json to_json(const McEstimate& e);
nlohmann::json to_json(const TransitionPoint& t);
nlohmann::json to_json(const CellResult& c);

std::string pretty(const LiftingParams& lp);
std::string pretty(const CapacityResult& r);
std::string pretty(const GradientCheck& g);
std::string pretty(const ModuloMReport& m);
std::string pretty(const OrderingReport& o);
std::string pretty(const TableReport& t);

std::string csv(const TableReport& t);

} // namespace nsp::cli
