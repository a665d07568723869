// SPDX-License-Identifier: Apache-2.0
//
// Grid warehouse task-allocation game. Agents pick one of the K nearest open
// tasks (or skip); once bound, an agent auto-navigates one Manhattan step per
// tick to the pickup cell and then to the task's drop-off corner.

#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdlib>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "scalecomm/errors.hpp"
#include "scalecomm/numcore/rng.hpp"

namespace scalecomm::env {

struct Cell {
  int x = 0;
  int y = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

inline int manhattan(Cell a, Cell b) { return std::abs(a.x - b.x) + std::abs(a.y - b.y); }

/// Number of drop-off corners, and therefore of task categories.
inline constexpr int kNumCategories = 4;

/// Width of one candidate row in an observation: pickup x,y, drop x,y, heuristic distance.
inline constexpr int kTaskFeatures = 5;

/// Width of the self block: x, y, carrying.
inline constexpr int kSelfFeatures = 3;

struct RewardConfig {
  double r_assign = 0.1;
  double r_pick = 0.5;
  double r_drop = 1.0;
  double r_unassigned = -0.01;
};

struct EnvConfig {
  int width = 10;
  int height = 10;
  int num_agents = 3;
  int num_candidates = 4;  // K
  int num_tasks = 6;       // active pool size (open + assigned + carried)
  int episode_length = 300;
  RewardConfig rewards;

  int obs_dim() const { return kSelfFeatures + kTaskFeatures * num_candidates; }
  int num_actions() const { return num_candidates + 1; }
  int skip_action() const { return num_candidates + 1; }

  void validate() const {
    if (num_agents < 1) throw ConfigError("env: num_agents must be >= 1");
    if (num_candidates < 1) throw ConfigError("env: num_candidates must be >= 1");
    if (width < 4 || height < 4) throw ConfigError("env: grid must be at least 4x4");
    if (episode_length < 1) throw ConfigError("env: episode_length must be >= 1");
    if (num_tasks <= num_agents) {
      throw ConfigError("env: num_tasks must exceed num_agents so an open task always exists");
    }
    if (num_agents > width * height) throw ConfigError("env: more agents than free cells");
    const auto& r = rewards;
    if (!(r.r_drop > r.r_pick && r.r_pick > r.r_assign && r.r_assign > 0.0)) {
      throw ConfigError("env: rewards must satisfy r_drop > r_pick > r_assign > 0");
    }
    if (!(r.r_unassigned < 0.0)) throw ConfigError("env: r_unassigned must be negative");
  }
};

enum class TaskStatus { open, assigned, carried, delivered };

struct Task {
  int id = 0;
  Cell pickup;
  Cell drop;
  int category = 0;  // drop-corner id
  TaskStatus status = TaskStatus::open;
};

struct Agent {
  Cell pos;
  bool carrying = false;
  int task = -1;  // bound task id or -1
};

/// Per-agent view: self features, K candidate rows, and the padding mask.
struct Observation {
  std::vector<double> features;  // length 3 + 5K
  std::vector<int> candidates;   // task id per slot, -1 when padded
  std::vector<bool> mask;        // true where the slot holds an open task
  int label = 0;                 // drop-corner id of the top candidate

  std::size_t valid_count() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
  }
};

/// Event counts produced by a single step.
struct StepEvents {
  int assignments = 0;
  int pickups = 0;
  int deliveries = 0;
  int idle = 0;
  std::vector<bool> idle_agents;
};

struct StepResult {
  std::vector<Observation> observations;
  std::vector<double> rewards;
  bool done = false;
  StepEvents events;
};

class Warehouse {
 public:
  explicit Warehouse(EnvConfig cfg) : cfg_(std::move(cfg)), rng_(0) { cfg_.validate(); }

  const EnvConfig& config() const { return cfg_; }

  std::vector<Observation> reset(std::uint64_t seed) {
    rng_ = num::Rng(seed);
    t_ = 0;
    next_task_id_ = 0;
    tasks_.clear();
    agents_.assign(static_cast<std::size_t>(cfg_.num_agents), Agent{});
    std::vector<int> cells(static_cast<std::size_t>(cfg_.width * cfg_.height));
    for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<int>(i);
    rng_.shuffle(cells);
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      agents_[i].pos = Cell{cells[i] % cfg_.width, cells[i] / cfg_.width};
    }
    for (int k = 0; k < cfg_.num_tasks; ++k) spawn_task();
    observations_ = observe_all();
    return observations_;
  }

  /// Advances one tick. Actions are 1-based: 1..K pick candidate slot, K+1 skips.
  StepResult step(const std::vector<int>& actions) {
    if (done()) throw DomainError("step: episode already done");
    if (static_cast<int>(actions.size()) != cfg_.num_agents) {
      throw StructuralError("step: expected one action per agent");
    }
    for (int a : actions) {
      if (a < 1 || a > cfg_.skip_action()) {
        throw DomainError("step: action " + std::to_string(a) + " out of range 1.." +
                          std::to_string(cfg_.skip_action()));
      }
    }
    const auto& r = cfg_.rewards;
    StepResult out;
    out.rewards.assign(agents_.size(), 0.0);
    out.events.idle_agents.assign(agents_.size(), false);

    // Assignment phase, in agent-index order: a lower index wins contention.
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      Agent& ag = agents_[i];
      if (ag.task >= 0) continue;
      const int a = actions[i];
      bool bound = false;
      if (a <= cfg_.num_candidates) {
        const Observation& ob = observations_[i];
        const auto slot = static_cast<std::size_t>(a - 1);
        if (ob.mask[slot]) {
          Task& task = task_by_id(ob.candidates[slot]);
          if (task.status == TaskStatus::open) {
            task.status = TaskStatus::assigned;
            ag.task = task.id;
            out.rewards[i] += r.r_assign;
            ++out.events.assignments;
            bound = true;
          }
        }
      }
      if (!bound) {
        out.rewards[i] += r.r_unassigned;
        ++out.events.idle;
        out.events.idle_agents[i] = true;
      }
    }

    // Movement phase: one Manhattan step toward pickup, then toward drop.
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      Agent& ag = agents_[i];
      if (ag.task < 0) continue;
      Task& task = task_by_id(ag.task);
      if (!ag.carrying) {
        if (ag.pos != task.pickup) ag.pos = toward(ag.pos, task.pickup);
        if (ag.pos == task.pickup) {
          ag.carrying = true;
          task.status = TaskStatus::carried;
          out.rewards[i] += r.r_pick;
          ++out.events.pickups;
        }
      } else {
        ag.pos = toward(ag.pos, task.drop);
        if (ag.pos == task.drop) {
          task.status = TaskStatus::delivered;
          ag.carrying = false;
          ag.task = -1;
          out.rewards[i] += r.r_drop;
          ++out.events.deliveries;
          ++delivered_total_;
          spawn_task();
        }
      }
    }
    tasks_.erase(std::remove_if(tasks_.begin(), tasks_.end(),
                                [](const Task& tk) { return tk.status == TaskStatus::delivered; }),
                 tasks_.end());

    ++t_;
    observations_ = observe_all();
    out.observations = observations_;
    out.done = done();
    return out;
  }

  bool done() const { return t_ >= cfg_.episode_length; }
  int t() const { return t_; }
  const std::vector<Agent>& agents() const { return agents_; }
  const std::vector<Task>& tasks() const { return tasks_; }
  const std::vector<Observation>& observations() const { return observations_; }

  std::size_t count_status(TaskStatus s) const {
    return static_cast<std::size_t>(
        std::count_if(tasks_.begin(), tasks_.end(), [s](const Task& tk) { return tk.status == s; }));
  }

  Cell corner(int id) const {
    return Cell{(id & 1) ? cfg_.width - 1 : 0, (id & 2) ? cfg_.height - 1 : 0};
  }

  /// Manhattan length of agent→pickup→drop, divided by twice the grid diameter
  /// so it stays in [0, 1].
  double heuristic_distance(Cell from, const Task& task) const {
    const double diameter = static_cast<double>((cfg_.width - 1) + (cfg_.height - 1));
    return (manhattan(from, task.pickup) + manhattan(task.pickup, task.drop)) / (2.0 * diameter);
  }

  /// ASCII frame: agents as digits (uppercase letter when carrying), open
  /// pickups as 'o', claimed pickups as '*', corners as '#'.
  std::string render() const {
    std::vector<std::string> rows(static_cast<std::size_t>(cfg_.height),
                                  std::string(static_cast<std::size_t>(cfg_.width), '.'));
    auto put = [&](Cell c, char ch) {
      rows[static_cast<std::size_t>(c.y)][static_cast<std::size_t>(c.x)] = ch;
    };
    for (int c = 0; c < kNumCategories; ++c) put(corner(c), '#');
    for (const Task& tk : tasks_) {
      if (tk.status == TaskStatus::open) put(tk.pickup, 'o');
      else if (tk.status == TaskStatus::assigned) put(tk.pickup, '*');
    }
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      const char base = agents_[i].carrying ? 'A' : '0';
      put(agents_[i].pos, static_cast<char>(base + static_cast<int>(i % 10)));
    }
    std::ostringstream os;
    os << "t=" << t_ << '\n';
    for (const auto& row : rows) os << row << '\n';
    return os.str();
  }

 private:
  Task& task_by_id(int id) {
    for (Task& tk : tasks_) {
      if (tk.id == id) return tk;
    }
    throw StructuralError("warehouse: unknown task id " + std::to_string(id));
  }

  static Cell toward(Cell from, Cell to) {
    if (from.x != to.x) from.x += (to.x > from.x) ? 1 : -1;
    else if (from.y != to.y) from.y += (to.y > from.y) ? 1 : -1;
    return from;
  }

  bool is_corner(Cell c) const {
    return (c.x == 0 || c.x == cfg_.width - 1) && (c.y == 0 || c.y == cfg_.height - 1);
  }

  void spawn_task() {
    Task task;
    task.id = next_task_id_++;
    do {
      task.pickup = Cell{static_cast<int>(rng_.index(static_cast<std::size_t>(cfg_.width))),
                         static_cast<int>(rng_.index(static_cast<std::size_t>(cfg_.height)))};
    } while (is_corner(task.pickup));
    task.category = static_cast<int>(rng_.index(kNumCategories));
    task.drop = corner(task.category);
    tasks_.push_back(task);
  }

  std::vector<Observation> observe_all() const {
    std::vector<Observation> obs;
    obs.reserve(agents_.size());
    for (const Agent& ag : agents_) obs.push_back(observe(ag));
    return obs;
  }

  Observation observe(const Agent& ag) const {
    const int K = cfg_.num_candidates;
    const double w = cfg_.width, h = cfg_.height;
    Observation ob;
    ob.features.assign(static_cast<std::size_t>(cfg_.obs_dim()), 0.0);
    ob.candidates.assign(static_cast<std::size_t>(K), -1);
    ob.mask.assign(static_cast<std::size_t>(K), false);
    ob.features[0] = ag.pos.x / w;
    ob.features[1] = ag.pos.y / h;
    ob.features[2] = ag.carrying ? 1.0 : 0.0;

    std::vector<std::pair<double, const Task*>> ranked;
    for (const Task& tk : tasks_) {
      if (tk.status == TaskStatus::open) ranked.emplace_back(heuristic_distance(ag.pos, tk), &tk);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first < b.first : a.second->id < b.second->id;
    });
    const std::size_t n = std::min(ranked.size(), static_cast<std::size_t>(K));
    for (std::size_t k = 0; k < n; ++k) {
      const Task& tk = *ranked[k].second;
      const std::size_t off = kSelfFeatures + kTaskFeatures * k;
      ob.features[off + 0] = tk.pickup.x / w;
      ob.features[off + 1] = tk.pickup.y / h;
      ob.features[off + 2] = tk.drop.x / w;
      ob.features[off + 3] = tk.drop.y / h;
      ob.features[off + 4] = ranked[k].first;
      ob.candidates[k] = tk.id;
      ob.mask[k] = true;
    }
    ob.label = n > 0 ? ranked[0].second->category : 0;
    return ob;
  }

  EnvConfig cfg_;
  num::Rng rng_;
  int t_ = 0;
  int next_task_id_ = 0;
  long delivered_total_ = 0;
  std::vector<Agent> agents_;
  std::vector<Task> tasks_;
  std::vector<Observation> observations_;
};

/// Nearest-task greedy: the top-ranked candidate, or skip when nothing is open.
inline int greedy_action(const Observation& ob) {
  return ob.mask.empty() || !ob.mask[0] ? static_cast<int>(ob.mask.size()) + 1 : 1;
}

}  // namespace scalecomm::env
