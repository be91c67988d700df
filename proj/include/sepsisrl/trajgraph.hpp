#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "sepsisrl/cohort.hpp"

namespace sepsisrl::graph {

enum class NodeType { kPatient, kTimestep, kTerminal };

/// The three relations the encoders learn, plus the terminal hookup which
/// never enters an encoder (outcomes must not leak into state encodings).
enum class EdgeType { kAction, kPatientToTimestep, kTimestepToPatient, kToTerminal };

struct Node {
  NodeType type = NodeType::kPatient;
  std::size_t time_index = 0;    // 1-based for timesteps, 0 otherwise
  std::vector<double> features;  // invariant obs / variant obs / {reward}
};

struct Edge {
  std::size_t src = 0;  // index into Graph::nodes
  std::size_t dst = 0;
  EdgeType type = EdgeType::kAction;
  std::vector<double> attrs;  // one-hot(25) action / {1.0} weight / empty
};

enum class GraphKind { kFull, kSnapshot };

/// A full trajectory graph or a prefix snapshot of one. Construction uses a
/// canonical storage order (Patient, Timestep_1..Timestep_t, Terminal last),
/// but all consumers must work from node/edge types and time indices only.
struct Graph {
  GraphKind kind = GraphKind::kFull;
  std::vector<Node> nodes;
  std::vector<Edge> edges;

  std::size_t timestep_count() const;
  /// Timestep node indices ordered by time; patient/terminal lookups throw
  /// DataError when the node is absent or duplicated.
  std::size_t patient_node() const;
  std::vector<std::size_t> timestep_nodes_in_order() const;
  bool has_terminal() const;
  std::size_t terminal_node() const;
};

/// e_a of length 25. Throws DataError for a outside [0, 24].
std::vector<double> one_hot_action(int a);

/// Builds the full heterogeneous graph: one Patient node carrying the
/// invariant features, T Timestep nodes carrying the per-step variant
/// features, action edges t -> t+1 attributed with one_hot(actions[t]),
/// Patient <-> Timestep edges in both directions with weight 1, and a
/// Terminal node fed by the last timestep.
Graph build_trajectory_graph(const cohort::Trajectory& traj,
                             const cohort::FeatureSchema& schema);

/// The prefix snapshot g_t: Patient, Timesteps 1..t, their induced edges,
/// no Terminal. Requires 1 <= t <= T.
Graph snapshot_at(const Graph& full, std::size_t t);

/// All snapshots [g_1 .. g_T] in time order.
std::vector<Graph> snapshots(const Graph& full);

/// Checks every structural invariant and returns all violations found
/// (empty means the graph is well-formed). Labels are stable prefixes such
/// as "patient-count", "non-path action edges", "action-edge-count".
std::vector<std::string> validate_graph(const Graph& g);

/// Debug edge-list dump: `node <id> <type> <features...>` then
/// `edge <src> <dst> <type> <attrs...>`. Not a stability-guaranteed format.
void export_edge_list(const Graph& g, std::ostream& out);

}  // namespace sepsisrl::graph
