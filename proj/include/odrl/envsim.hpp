#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "odrl/config.hpp"
#include "odrl/image.hpp"
#include "odrl/rng.hpp"

namespace odrl::envsim {

// ============================================================================
// Two deterministic mini-arcade environments rendered to small RGB frames.
//
// minipac: grid maze (border walls plus pillars on even-even interior
//   cells). The agent collects beans (+10) and power pellets (+50); a pellet
//   frightens ghosts for a fixed number of steps, during which touching one
//   eats it (+200, it respawns at its start cell). Touching a ghost
//   otherwise is -500 and ends the episode. Episode also ends when every
//   collectible is gone or after max_steps. Ghosts chase (frightened: flee)
//   with probability 0.8, otherwise move uniformly among legal directions.
//   Object types: 0 pacman, 1 ghost, 2 bean, 3 pellet.
//
// minicross: road-crossing lanes. The agent sits in a fixed column and may
//   move up/down/nowhere; reaching the top row scores +100 and teleports it
//   back to the bottom. One car per interior row (odd rows travel right,
//   even rows left) advances with probability 0.9 each step and wraps
//   around. Collision costs -10 and resets the agent to the bottom row.
//   Episode ends only at max_steps. Object types: 0 chicken, 1 car.
//
// Rendering: uniform background; sprites drawn centered in their cell in the
// order beans, pellets, cars/ghosts, agent (agent on top, overlaps occlude).
// Walls block movement but draw as background. Sprite bitmaps double as the
// recognition templates, so on-screen appearance matches them pixel for
// pixel wherever entities do not overlap.
// ============================================================================

enum class EnvId { minipac, minicross };

EnvId parse_env_id(const std::string& name);
std::string env_name(EnvId id);

struct EnvConfig {
    EnvId env_id = EnvId::minipac;
    int grid_w = 9;
    int grid_h = 9;
    int cell_px = 8;   // frame is (grid_h*cell_px) x (grid_w*cell_px)
    int max_steps = 200;
    std::uint64_t seed = 1;
};

// Throws ConfigError unless grid_w, grid_h >= 5 and cell_px >= 4.
void validate(const EnvConfig& cfg);

// Consumes the env keys (env, grid_w, grid_h, cell_px, max_steps, seed)
// from a parsed config; validates.
EnvConfig env_config_from(KeyValueConfig& cfg);

struct Ghost {
    int x, y;
    int home_x, home_y;  // respawn cell
    int fright = 0;      // steps of frightened state remaining
};

struct Collectible {
    int x, y;
    bool alive = true;
};

struct Car {
    int x, y;
    int dir;  // +1 right, -1 left
};

struct EnvState {
    EnvConfig config;
    int agent_x = 0, agent_y = 0;
    std::vector<Ghost> ghosts;
    std::vector<Collectible> beans;
    std::vector<Collectible> pellets;
    std::vector<Car> cars;
    int step_count = 0;
    double score = 0.0;  // sum of raw rewards since reset
    bool done = false;
    Rng rng{0};
};

struct StepResult {
    Frame frame;
    double reward = 0.0;
    bool done = false;
};

struct GroundTruthBox {
    int object_type;
    Box box;  // pixel coordinates in the rendered frame
    bool operator==(const GroundTruthBox&) const = default;
};

struct SpriteBitmap {
    int object_type;
    std::string name;
    int w = 0, h = 0;
    std::vector<std::uint8_t> pixels;  // interleaved RGB, h*w*3
};

// Action tables. Ids index action_names(env); minipac has 9 actions
// (left, right, down, up, leftup, leftdown, rightup, rightdown, nowhere),
// minicross 3 (up, down, nowhere).
int action_count(EnvId id);
const std::vector<std::string>& action_names(EnvId id);

EnvState reset(const EnvConfig& cfg);

// Advances one step. Throws UsageError if the episode already ended or the
// action id is out of range.
//
// Randomness (one mt19937_64 stream per episode, stored in the state):
//   minipac, per ghost in index order: one uniform01 draw u; if u < 0.2 and
//   the ghost has a legal move, one uniform_int draw over the legal list
//   (order left, right, down, up). Chase consumes no further draws.
//   minicross, per car in row order: one uniform01 draw; the car advances
//   if it is < 0.9.
StepResult step(EnvState& state, int action);

Frame render(const EnvState& state);

// One box per live entity (the agent included), sorted by (type, y, x).
std::vector<GroundTruthBox> ground_truth(const EnvState& state);

int object_type_count(EnvId id);
std::string type_name(EnvId id, int object_type);
Rgb background_color(EnvId id);

// Largest |reward| the environment can emit in one step (reward scaling).
double max_abs_reward(EnvId id);

// Sprite bitmaps for the given cell size; these are the match templates.
// Sprites are (cell_px-2) square, centered in the cell.
std::vector<SpriteBitmap> sprites(EnvId id, int cell_px);

bool is_wall(const EnvConfig& cfg, int cx, int cy);

// Grid-coordinate layout as flat text, one "type x y" line per live entity,
// sorted by (type, y, x). Used to freeze golden reset layouts.
void write_layout(const std::string& path, const EnvState& state);
std::vector<std::array<int, 3>> read_layout(const std::string& path);
std::vector<std::array<int, 3>> layout_of(const EnvState& state);

}  // namespace odrl::envsim
