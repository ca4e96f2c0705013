#include "cloud/rope.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numbers>

namespace cloud::rope {

namespace {

double distance(const Point& a, const Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

Point clamp_point(Point p, double hi) {
  return {std::clamp(p.x, 0.0, hi), std::clamp(p.y, 0.0, hi)};
}

// Follow-the-leader: walk away from `anchor` in both directions and pull any
// geom that sits farther than L0 from its predecessor back onto the segment.
void project_chain(std::vector<Point>& geoms, std::size_t anchor, double rest) {
  auto pull = [rest](const Point& leader, Point& follower) {
    const double d = distance(leader, follower);
    if (d > rest) {
      const double k = rest / d;
      follower.x = leader.x + (follower.x - leader.x) * k;
      follower.y = leader.y + (follower.y - leader.y) * k;
    }
  };
  for (std::size_t i = anchor + 1; i < geoms.size(); ++i) pull(geoms[i - 1], geoms[i]);
  for (std::size_t i = anchor; i-- > 0;) pull(geoms[i + 1], geoms[i]);
}

void clamp_all(std::vector<Point>& geoms, double hi) {
  for (auto& g : geoms) g = clamp_point(g, hi);
}

// Walks a dense polyline starting at its first vertex and places `count`
// points, each exactly `chord` away (Euclidean) from the previous one.
std::vector<Point> resample_by_chord(const std::vector<Point>& dense, std::size_t count,
                                     double chord) {
  std::vector<Point> out{dense.front()};
  std::size_t seg = 0;
  while (out.size() < count) {
    const Point prev = out.back();
    bool placed = false;
    for (; seg + 1 < dense.size(); ++seg) {
      const Point a = dense[seg];
      const Point b = dense[seg + 1];
      if (distance(b, prev) < chord) continue;
      // Solve |a + t (b - a) - prev| = chord for the larger root in [0, 1].
      const double dx = b.x - a.x;
      const double dy = b.y - a.y;
      const double fx = a.x - prev.x;
      const double fy = a.y - prev.y;
      const double qa = dx * dx + dy * dy;
      const double qb = 2.0 * (fx * dx + fy * dy);
      const double qc = fx * fx + fy * fy - chord * chord;
      const double disc = std::max(0.0, qb * qb - 4.0 * qa * qc);
      const double t = std::clamp((-qb + std::sqrt(disc)) / (2.0 * qa), 0.0, 1.0);
      out.push_back({a.x + t * dx, a.y + t * dy});
      placed = true;
      break;
    }
    if (!placed) throw std::logic_error("goal template too short for the requested chain");
  }
  return out;
}

// Chain whose middle geom sits on the shared first vertex of both halves.
std::vector<Point> chain_from_halves(const std::vector<Point>& toward_head,
                                     const std::vector<Point>& toward_tail, std::size_t count,
                                     double chord) {
  const std::size_t mid = (count - 1) / 2;
  const auto head = resample_by_chord(toward_head, mid + 1, chord);
  const auto tail = resample_by_chord(toward_tail, count - mid, chord);
  std::vector<Point> geoms(head.rbegin(), head.rend());
  geoms.insert(geoms.end(), tail.begin() + 1, tail.end());
  return geoms;
}

template <class Curve>
std::vector<Point> sample_curve(Curve&& curve, double from, double to, std::size_t n = 4000) {
  std::vector<Point> pts;
  pts.reserve(n + 1);
  for (std::size_t i = 0; i <= n; ++i) {
    pts.push_back(curve(from + (to - from) * static_cast<double>(i) / static_cast<double>(n)));
  }
  return pts;
}

std::vector<Point> template_geoms(GoalKind kind, const EnvConfig& config) {
  const std::size_t n = config.geom_count;
  const double l0 = config.segment_length;
  const double length = static_cast<double>(n - 1) * l0;
  switch (kind) {
    case GoalKind::Straight: {
      std::vector<Point> g(n);
      const double half = static_cast<double>(n - 1) / 2.0;
      for (std::size_t i = 0; i < n; ++i) g[i] = {(static_cast<double>(i) - half) * l0, 0.0};
      return g;
    }
    case GoalKind::C: {
      const double sweep = 240.0 * std::numbers::pi / 180.0;
      const double r = length / sweep;
      auto arc = [r](double phi) { return Point{r * std::sin(phi), r - r * std::cos(phi)}; };
      return chain_from_halves(sample_curve(arc, 0.0, -0.7 * sweep),
                               sample_curve(arc, 0.0, 0.7 * sweep), n, l0);
    }
    case GoalKind::L: {
      const double leg = length;
      return chain_from_halves({{0.0, 0.0}, {-leg, 0.0}}, {{0.0, 0.0}, {0.0, leg}}, n, l0);
    }
    case GoalKind::S: {
      const double amplitude = 8.0;
      const double width = 6.0;
      auto sig = [=](double x) { return Point{x, amplitude * std::tanh(x / width)}; };
      return chain_from_halves(sample_curve(sig, 0.0, -length), sample_curve(sig, 0.0, length),
                               n, l0);
    }
    case GoalKind::Knot:
      break;
  }
  throw UnsupportedGoalError("goal kind '" + std::string(to_string(kind)) +
                             "' cannot be formed by a planar open chain");
}

std::string lower(std::string_view text) {
  std::string s(text);
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

}  // namespace

void EnvConfig::validate() const {
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("noise_sigma must be >= 0");
  if (!(pick_radius > 0.0)) throw std::invalid_argument("pick_radius must be > 0");
  if (!(segment_length > 0.0)) throw std::invalid_argument("segment_length must be > 0");
  if (geom_count < 2) throw std::invalid_argument("geom_count must be >= 2");
  if (image_size == 0) throw std::invalid_argument("image_size must be > 0");
  if (static_cast<double>(geom_count - 1) * segment_length >= static_cast<double>(image_size)) {
    throw std::invalid_argument("rope does not fit inside the image");
  }
  if (goal_max_rotation < 0.0 || goal_max_shift < 0.0) {
    throw std::invalid_argument("goal pose ranges must be >= 0");
  }
}

double EnvConfig::upper_bound() const {
  return std::nextafter(static_cast<double>(image_size), 0.0);
}

RopeState straight_chain(const EnvConfig& config) {
  RopeState s;
  s.geoms.resize(config.geom_count);
  const double center = static_cast<double>(config.image_size) / 2.0;
  const double half = static_cast<double>(config.geom_count - 1) / 2.0;
  for (std::size_t i = 0; i < config.geom_count; ++i) {
    s.geoms[i] = {center + (static_cast<double>(i) - half) * config.segment_length, center};
  }
  return s;
}

RopeState perturb(const RopeState& state, std::size_t count, Rng& rng, const EnvConfig& config) {
  EnvConfig det = config;
  det.mode = EnvMode::Deterministic;
  RopeState s = state;
  for (std::size_t i = 0; i < count; ++i) s = step(s, sample_action(s, rng, det), det, rng);
  return s;
}

RopeState reset(const EnvConfig& config, Rng& rng) {
  config.validate();
  return perturb(straight_chain(config), config.burn_in, rng, config);
}

RopeState reset(const EnvConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  return reset(config, rng);
}

std::size_t nearest_geom(const RopeState& state, double x, double y) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < state.geoms.size(); ++i) {
    const double d = distance(state.geoms[i], {x, y});
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

RopeState step(const RopeState& state, const Action& action, const EnvConfig& config,
               Rng& noise_rng) {
  const double hi = config.upper_bound();
  RopeState next = state;
  auto& g = next.geoms;
  const std::size_t picked = nearest_geom(state, action.x1, action.y1);
  if (distance(g[picked], {action.x1, action.y1}) <= config.pick_radius) {
    g[picked] = {action.x2, action.y2};
    project_chain(g, picked, config.segment_length);
    clamp_all(g, hi);
  }
  if (config.mode == EnvMode::Stochastic && config.noise_sigma > 0.0) {
    for (auto& p : g) {
      p.x += gaussian(noise_rng, config.noise_sigma);
      p.y += gaussian(noise_rng, config.noise_sigma);
    }
    project_chain(g, picked, config.segment_length);
    clamp_all(g, hi);
  }
  return next;
}

Action clamp_action(const Action& a, const EnvConfig& config) {
  const double hi = config.upper_bound();
  return {std::clamp(a.x1, 0.0, hi), std::clamp(a.y1, 0.0, hi), std::clamp(a.x2, 0.0, hi),
          std::clamp(a.y2, 0.0, hi)};
}

Action sample_action(const RopeState& state, Rng& rng, const EnvConfig& config) {
  const auto& anchor = state.geoms[uniform_index(rng, state.geoms.size())];
  const double px = anchor.x + uniform(rng, -2.0, 2.0);
  const double py = anchor.y + uniform(rng, -2.0, 2.0);
  const double magnitude = uniform(rng, 2.0, 12.0);
  const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  return clamp_action(
      {px, py, px + magnitude * std::cos(angle), py + magnitude * std::sin(angle)}, config);
}

RopeState make_goal(GoalKind kind, const GoalPose& pose, const EnvConfig& config) {
  auto local = template_geoms(kind, config);
  double lo_x = local[0].x, hi_x = local[0].x, lo_y = local[0].y, hi_y = local[0].y;
  for (const auto& p : local) {
    lo_x = std::min(lo_x, p.x);
    hi_x = std::max(hi_x, p.x);
    lo_y = std::min(lo_y, p.y);
    hi_y = std::max(hi_y, p.y);
  }
  const double cx = (lo_x + hi_x) / 2.0;
  const double cy = (lo_y + hi_y) / 2.0;
  const double c = std::cos(pose.angle);
  const double s = std::sin(pose.angle);
  const double center = static_cast<double>(config.image_size) / 2.0;
  RopeState goal;
  goal.geoms.reserve(local.size());
  for (const auto& p : local) {
    const double x = p.x - cx;
    const double y = p.y - cy;
    goal.geoms.push_back({center + pose.dx + (c * x - s * y), center + pose.dy + (s * x + c * y)});
  }
  return goal;
}

RopeState make_goal(GoalKind kind, Rng& rng, const EnvConfig& config) {
  config.validate();
  if (kind == GoalKind::Knot) return make_goal(kind, GoalPose{}, config);
  constexpr int kAttempts = 64;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    GoalPose pose{uniform(rng, -config.goal_max_rotation, config.goal_max_rotation),
                  uniform(rng, -config.goal_max_shift, config.goal_max_shift),
                  uniform(rng, -config.goal_max_shift, config.goal_max_shift)};
    auto goal = make_goal(kind, pose, config);
    if (in_bounds(goal, config)) return goal;
  }
  return make_goal(kind, GoalPose{}, config);
}

double max_segment_length(const RopeState& state) {
  double best = 0.0;
  for (std::size_t i = 1; i < state.geoms.size(); ++i) {
    best = std::max(best, distance(state.geoms[i - 1], state.geoms[i]));
  }
  return best;
}

bool in_bounds(const RopeState& state, const EnvConfig& config) {
  const double size = static_cast<double>(config.image_size);
  return std::all_of(state.geoms.begin(), state.geoms.end(), [size](const Point& p) {
    return p.x >= 0.0 && p.x < size && p.y >= 0.0 && p.y < size;
  });
}

std::string_view to_string(EnvMode mode) {
  return mode == EnvMode::Deterministic ? "deterministic" : "stochastic";
}

std::string_view to_string(ObsKind kind) { return kind == ObsKind::Coords ? "coords" : "raster"; }

std::string_view to_string(GoalKind kind) {
  switch (kind) {
    case GoalKind::Straight: return "straight";
    case GoalKind::C: return "c";
    case GoalKind::L: return "l";
    case GoalKind::S: return "s";
    case GoalKind::Knot: return "knot";
  }
  return "unknown";
}

EnvMode parse_env_mode(std::string_view text) {
  const auto t = lower(text);
  if (t == "det" || t == "deterministic") return EnvMode::Deterministic;
  if (t == "stoch" || t == "stochastic") return EnvMode::Stochastic;
  throw std::invalid_argument("unknown environment mode '" + std::string(text) + "'");
}

ObsKind parse_obs_kind(std::string_view text) {
  const auto t = lower(text);
  if (t == "coords") return ObsKind::Coords;
  if (t == "raster") return ObsKind::Raster;
  throw std::invalid_argument("unknown observation kind '" + std::string(text) + "'");
}

GoalKind parse_goal_kind(std::string_view text) {
  const auto t = lower(text);
  if (t == "straight") return GoalKind::Straight;
  if (t == "c") return GoalKind::C;
  if (t == "l") return GoalKind::L;
  if (t == "s") return GoalKind::S;
  if (t == "knot") return GoalKind::Knot;
  throw std::invalid_argument("unknown goal kind '" + std::string(text) + "'");
}

}  // namespace cloud::rope
