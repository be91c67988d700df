#include "sepsisrl/trajgraph.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <ostream>
#include <set>

#include "sepsisrl/errors.hpp"

namespace sepsisrl::graph {

namespace {

const char* node_type_name(NodeType t) {
  switch (t) {
    case NodeType::kPatient: return "patient";
    case NodeType::kTimestep: return "timestep";
    case NodeType::kTerminal: return "terminal";
  }
  return "?";
}

const char* edge_type_name(EdgeType t) {
  switch (t) {
    case EdgeType::kAction: return "action";
    case EdgeType::kPatientToTimestep: return "patient_to_timestep";
    case EdgeType::kTimestepToPatient: return "timestep_to_patient";
    case EdgeType::kToTerminal: return "to_terminal";
  }
  return "?";
}

bool is_unit_one_hot(const std::vector<double>& v, std::size_t len) {
  if (v.size() != len) return false;
  std::size_t ones = 0;
  for (double x : v) {
    if (x == 1.0) {
      ++ones;
    } else if (x != 0.0) {
      return false;
    }
  }
  return ones == 1;
}

}  // namespace

std::size_t Graph::timestep_count() const {
  return static_cast<std::size_t>(
      std::count_if(nodes.begin(), nodes.end(),
                    [](const Node& n) { return n.type == NodeType::kTimestep; }));
}

std::size_t Graph::patient_node() const {
  std::size_t found = nodes.size();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].type == NodeType::kPatient) {
      if (found != nodes.size()) throw DataError("graph: multiple Patient nodes");
      found = i;
    }
  }
  if (found == nodes.size()) throw DataError("graph: no Patient node");
  return found;
}

std::vector<std::size_t> Graph::timestep_nodes_in_order() const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].type == NodeType::kTimestep) idx.push_back(i);
  }
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return nodes[a].time_index < nodes[b].time_index;
  });
  return idx;
}

bool Graph::has_terminal() const {
  return std::any_of(nodes.begin(), nodes.end(),
                     [](const Node& n) { return n.type == NodeType::kTerminal; });
}

std::size_t Graph::terminal_node() const {
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].type == NodeType::kTerminal) return i;
  }
  throw DataError("graph: no Terminal node");
}

std::vector<double> one_hot_action(int a) {
  if (a < 0 || a >= cohort::kActionCount) {
    throw DataError("one_hot_action: action " + std::to_string(a) +
                    " outside [0, 24]");
  }
  std::vector<double> v(cohort::kActionCount, 0.0);
  v[static_cast<std::size_t>(a)] = 1.0;
  return v;
}

Graph build_trajectory_graph(const cohort::Trajectory& traj,
                             const cohort::FeatureSchema& schema) {
  cohort::validate_trajectory(traj, schema, /*allow_short=*/false);
  const std::size_t T = traj.length();

  Graph g;
  g.kind = GraphKind::kFull;
  g.nodes.reserve(T + 2);

  Node patient;
  patient.type = NodeType::kPatient;
  patient.features = traj.invariant_obs;
  g.nodes.push_back(std::move(patient));

  for (std::size_t t = 1; t <= T; ++t) {
    Node step;
    step.type = NodeType::kTimestep;
    step.time_index = t;
    step.features = traj.steps[t - 1];
    g.nodes.push_back(std::move(step));
  }

  Node terminal;
  terminal.type = NodeType::kTerminal;
  terminal.features = {static_cast<double>(traj.reward)};
  g.nodes.push_back(std::move(terminal));
  const std::size_t terminal_idx = g.nodes.size() - 1;

  // Node index of Timestep_t is t (patient sits at 0).
  for (std::size_t t = 1; t + 1 <= T; ++t) {
    Edge e;
    e.src = t;
    e.dst = t + 1;
    e.type = EdgeType::kAction;
    e.attrs = one_hot_action(traj.actions[t - 1]);
    g.edges.push_back(std::move(e));
  }
  for (std::size_t t = 1; t <= T; ++t) {
    g.edges.push_back({0, t, EdgeType::kPatientToTimestep, {1.0}});
    g.edges.push_back({t, 0, EdgeType::kTimestepToPatient, {1.0}});
  }
  g.edges.push_back({T, terminal_idx, EdgeType::kToTerminal, {}});
  return g;
}

Graph snapshot_at(const Graph& full, std::size_t t) {
  const std::size_t T = full.timestep_count();
  if (t < 1 || t > T) {
    throw DataError("snapshot_at: t=" + std::to_string(t) + " outside [1, " +
                    std::to_string(T) + "]");
  }
  const std::size_t patient_idx = full.patient_node();
  const auto steps = full.timestep_nodes_in_order();

  Graph g;
  g.kind = GraphKind::kSnapshot;
  g.nodes.reserve(t + 1);
  g.nodes.push_back(full.nodes[patient_idx]);

  // Old node index -> new node index for the retained prefix.
  std::map<std::size_t, std::size_t> remap;
  remap[patient_idx] = 0;
  for (std::size_t i = 0; i < t; ++i) {
    remap[steps[i]] = g.nodes.size();
    g.nodes.push_back(full.nodes[steps[i]]);
  }

  for (const Edge& e : full.edges) {
    if (e.type == EdgeType::kToTerminal) continue;
    const auto src = remap.find(e.src);
    const auto dst = remap.find(e.dst);
    if (src == remap.end() || dst == remap.end()) continue;
    g.edges.push_back({src->second, dst->second, e.type, e.attrs});
  }
  return g;
}

std::vector<Graph> snapshots(const Graph& full) {
  const std::size_t T = full.timestep_count();
  std::vector<Graph> out;
  out.reserve(T);
  for (std::size_t t = 1; t <= T; ++t) out.push_back(snapshot_at(full, t));
  return out;
}

std::vector<std::string> validate_graph(const Graph& g) {
  std::vector<std::string> v;
  const bool full = g.kind == GraphKind::kFull;

  // Node census.
  std::size_t patients = 0, terminals = 0;
  std::vector<std::size_t> time_indices;
  std::size_t variant_width = 0;
  bool width_set = false;
  for (const Node& n : g.nodes) {
    switch (n.type) {
      case NodeType::kPatient:
        ++patients;
        break;
      case NodeType::kTerminal:
        ++terminals;
        if (n.features.size() != 1 ||
            (n.features[0] != 1.0 && n.features[0] != -1.0)) {
          v.push_back("terminal-reward: Terminal must carry exactly {+1} or {-1}");
        }
        break;
      case NodeType::kTimestep:
        time_indices.push_back(n.time_index);
        if (!width_set) {
          variant_width = n.features.size();
          width_set = true;
        } else if (n.features.size() != variant_width) {
          v.push_back("feature-width: Timestep feature vectors differ in length");
        }
        break;
    }
  }
  if (patients != 1) {
    v.push_back("patient-count: expected exactly 1 Patient node, found " +
                std::to_string(patients));
  }
  if (full && terminals != 1) {
    v.push_back("terminal-count: expected exactly 1 Terminal node, found " +
                std::to_string(terminals));
  }
  if (!full && terminals != 0) {
    v.push_back("terminal-in-snapshot: snapshots must not contain a Terminal node");
  }

  const std::size_t T = time_indices.size();
  const std::size_t min_T = full ? 2 : 1;
  if (T < min_T || T > cohort::kMaxTrajectoryLength) {
    v.push_back("timestep-count: " + std::to_string(T) + " outside [" +
                std::to_string(min_T) + ", 20]");
  }
  std::sort(time_indices.begin(), time_indices.end());
  for (std::size_t i = 0; i < T; ++i) {
    if (time_indices[i] != i + 1) {
      v.push_back("timestep-indexing: time indices are not exactly 1..T");
      break;
    }
  }

  // Edge checks need endpoint sanity first.
  for (const Edge& e : g.edges) {
    if (e.src >= g.nodes.size() || e.dst >= g.nodes.size()) {
      v.push_back("edge-endpoints: edge references a missing node");
      return v;  // nothing else is checkable
    }
  }

  std::size_t action_edges = 0, terminal_edges = 0;
  std::set<std::pair<std::size_t, std::size_t>> action_pairs;  // (t, t') seen
  std::map<std::size_t, std::size_t> p2t_count, t2p_count;     // per time index
  for (const Edge& e : g.edges) {
    const Node& s = g.nodes[e.src];
    const Node& d = g.nodes[e.dst];
    switch (e.type) {
      case EdgeType::kAction: {
        ++action_edges;
        if (s.type != NodeType::kTimestep || d.type != NodeType::kTimestep) {
          v.push_back("edge-type-endpoints: action edge must join two Timesteps");
          break;
        }
        if (!is_unit_one_hot(e.attrs, cohort::kActionCount)) {
          v.push_back("action-attr: action edge attribute is not a length-25 one-hot");
        }
        if (!action_pairs.insert({s.time_index, d.time_index}).second) {
          v.push_back("non-path action edges: duplicate action edge");
        }
        if (d.time_index != s.time_index + 1) {
          v.push_back("non-path action edges: edge " + std::to_string(s.time_index) +
                      " -> " + std::to_string(d.time_index) +
                      " is not a consecutive-time link");
        }
        break;
      }
      case EdgeType::kPatientToTimestep:
        if (s.type != NodeType::kPatient || d.type != NodeType::kTimestep) {
          v.push_back("edge-type-endpoints: patient_to_timestep endpoints wrong");
          break;
        }
        if (e.attrs != std::vector<double>{1.0}) {
          v.push_back("patient-timestep-weight: expected attribute {1.0}");
        }
        p2t_count[d.time_index]++;
        break;
      case EdgeType::kTimestepToPatient:
        if (s.type != NodeType::kTimestep || d.type != NodeType::kPatient) {
          v.push_back("edge-type-endpoints: timestep_to_patient endpoints wrong");
          break;
        }
        if (e.attrs != std::vector<double>{1.0}) {
          v.push_back("patient-timestep-weight: expected attribute {1.0}");
        }
        t2p_count[s.time_index]++;
        break;
      case EdgeType::kToTerminal:
        ++terminal_edges;
        if (s.type != NodeType::kTimestep || d.type != NodeType::kTerminal) {
          v.push_back("edge-type-endpoints: to_terminal endpoints wrong");
        } else if (s.time_index != T) {
          v.push_back("terminal-edge: must leave the last Timestep");
        }
        if (!e.attrs.empty()) {
          v.push_back("terminal-edge: carries attributes but must not");
        }
        break;
    }
  }

  if (T >= 1 && action_edges != T - 1) {
    v.push_back("action-edge-count: expected " + std::to_string(T - 1) + ", found " +
                std::to_string(action_edges));
  }
  bool pt_ok = true;
  for (std::size_t t = 1; t <= T; ++t) {
    pt_ok = pt_ok && p2t_count[t] == 1 && t2p_count[t] == 1;
  }
  if (!pt_ok || p2t_count.size() != T || t2p_count.size() != T) {
    v.push_back(
        "patient-timestep-edges: each Timestep needs exactly one edge in each "
        "direction");
  }
  if (full && terminal_edges != 1) {
    v.push_back("terminal-edge-count: expected exactly 1, found " +
                std::to_string(terminal_edges));
  }
  if (!full && terminal_edges != 0) {
    v.push_back("terminal-in-snapshot: snapshot contains a to_terminal edge");
  }
  return v;
}

void export_edge_list(const Graph& g, std::ostream& out) {
  char buf[64];
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const Node& n = g.nodes[i];
    out << "node " << i << ' ' << node_type_name(n.type);
    for (double f : n.features) {
      std::snprintf(buf, sizeof buf, " %.17g", f);
      out << buf;
    }
    out << '\n';
  }
  for (const Edge& e : g.edges) {
    out << "edge " << e.src << ' ' << e.dst << ' ' << edge_type_name(e.type);
    for (double a : e.attrs) {
      std::snprintf(buf, sizeof buf, " %.17g", a);
      out << buf;
    }
    out << '\n';
  }
}

}  // namespace sepsisrl::graph
