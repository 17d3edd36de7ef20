#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "rbflow/common.hpp"
#include "rbflow/control.hpp"
#include "rbflow/field.hpp"
#include "rbflow/scheme.hpp"

namespace rbflow {

using Json = nlohmann::ordered_json;

inline Json to_json(const Vec& v) {
  Json arr = Json::array();
  for (int i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

inline Json to_json(const Mat& m) {
  Json arr = Json::array();
  for (int i = 0; i < m.rows(); ++i) arr.push_back(to_json(Vec(m.row(i).transpose())));
  return arr;
}

inline Vec vec_from_json(const Json& j) {
  Vec v(j.size());
  for (size_t i = 0; i < j.size(); ++i) v[static_cast<int>(i)] = j[i].get<double>();
  return v;
}

inline Mat mat_from_json(const Json& j) {
  const int rows = static_cast<int>(j.size());
  const int cols = rows > 0 ? static_cast<int>(j[0].size()) : 0;
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int c = 0; c < cols; ++c) m(i, c) = j[static_cast<size_t>(i)][static_cast<size_t>(c)].get<double>();
  return m;
}

inline Json control_to_json(const Control& c) {
  Json j;
  switch (c.repr) {
    case ControlRepr::Constant:
      j["repr"] = "constant";
      j["value"] = to_json(c.value);
      break;
    case ControlRepr::AffineBias:
      j["repr"] = "affine_bias";
      j["W0"] = to_json(c.W0);
      j["A0"] = to_json(c.A0);
      j["b0"] = to_json(c.b0);
      j["b1"] = to_json(c.b1);
      break;
    case ControlRepr::PiecewiseConstant: {
      j["repr"] = "piecewise";
      j["grid"] = c.grid;
      Json vals = Json::array();
      for (const Vec& v : c.values) vals.push_back(to_json(v));
      j["values"] = vals;
      break;
    }
  }
  j["T"] = c.T;
  return j;
}

inline Control control_from_json(const Json& j) {
  const std::string repr = j.at("repr").get<std::string>();
  const double T = j.at("T").get<double>();
  if (repr == "constant") return Control::constant(vec_from_json(j.at("value")), T);
  if (repr == "affine_bias")
    return Control::affine_bias(mat_from_json(j.at("W0")), mat_from_json(j.at("A0")),
                                vec_from_json(j.at("b0")), vec_from_json(j.at("b1")), T);
  if (repr == "piecewise") {
    std::vector<double> grid = j.at("grid").get<std::vector<double>>();
    std::vector<Vec> vals;
    for (const auto& v : j.at("values")) vals.push_back(vec_from_json(v));
    return Control::piecewise(std::move(grid), std::move(vals));
  }
  throw std::invalid_argument("unknown control repr: " + repr);
}

/// {"d":.., "p":.., "activation":.., "mode":.., "control":{..}}; field order
/// fixed by construction (ordered document).
inline Json field_to_json(const NeuronField& f, const Control& c) {
  Json j;
  j["d"] = f.d;
  j["p"] = f.p;
  j["activation"] = f.activation.name();
  j["mode"] = f.weights_only ? "weights_only" : "full";
  if (f.weights_only) {
    j["fixed_a"] = to_json(f.fixed_a);
    j["fixed_b"] = to_json(f.fixed_b);
  }
  j["control"] = control_to_json(c);
  return j;
}

inline std::pair<NeuronField, Control> field_from_json(const Json& j) {
  const int d = j.at("d").get<int>();
  const int p = j.at("p").get<int>();
  const Activation act = Activation::from_name(j.at("activation").get<std::string>());
  const std::string mode = j.at("mode").get<std::string>();
  NeuronField f = mode == "weights_only"
                      ? NeuronField::weights_only_field(d, p, act, mat_from_json(j.at("fixed_a")),
                                                        vec_from_json(j.at("fixed_b")))
                      : NeuronField::full(d, p, act);
  Control c = control_from_json(j.at("control"));
  detail::require(c.dim == f.theta_dim(), "field json: control length mismatch");
  return {std::move(f), std::move(c)};
}

inline const char* scheme_kind_name(SchemeKind k) {
  switch (k) {
    case SchemeKind::Explicit: return "explicit";
    case SchemeKind::SingleBatch: return "single_batch";
    case SchemeKind::DropOne: return "drop_one";
    case SchemeKind::PickOne: return "pick_one";
    case SchemeKind::BalancedAllSubsets: return "balanced";
    case SchemeKind::BalancedDisjoint: return "balanced_disjoint";
    case SchemeKind::AllSubsets: return "all_subsets";
    case SchemeKind::Bernoulli: return "bernoulli";
  }
  return "?";
}

inline Json scheme_to_json(const BatchScheme& s) {
  Json j;
  j["kind"] = scheme_kind_name(s.kind);
  j["p"] = s.p;
  if (s.kind == SchemeKind::BalancedAllSubsets || s.kind == SchemeKind::BalancedDisjoint)
    j["r"] = s.r;
  if (s.kind == SchemeKind::Bernoulli) j["q_B"] = s.q_B;
  if (s.kind == SchemeKind::Explicit) {
    j["batches"] = s.batches;
    j["q"] = s.q;
  }
  return j;
}

inline BatchScheme scheme_from_json(const Json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  const int p = j.at("p").get<int>();
  if (kind == "single_batch") return BatchScheme::single_batch(p);
  if (kind == "drop_one") return BatchScheme::drop_one(p);
  if (kind == "pick_one") return BatchScheme::pick_one(p);
  if (kind == "balanced") return BatchScheme::balanced(p, j.at("r").get<int>());
  if (kind == "balanced_disjoint") return BatchScheme::balanced_disjoint(p, j.at("r").get<int>());
  if (kind == "all_subsets") return BatchScheme::all_subsets(p);
  if (kind == "bernoulli") return BatchScheme::bernoulli(p, j.at("q_B").get<double>());
  if (kind == "explicit")
    return BatchScheme::explicit_scheme(p, j.at("batches").get<std::vector<std::vector<int>>>(),
                                        j.at("q").get<std::vector<double>>());
  throw std::invalid_argument("unknown scheme kind: " + kind);
}

}  // namespace rbflow
