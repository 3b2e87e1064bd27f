#include "odrl/envsim.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "odrl/errors.hpp"

namespace odrl::envsim {
namespace {

constexpr int kSpritePattern = 6;  // native pattern resolution
constexpr int kFrightSteps = 10;

constexpr double kBeanReward = 10.0;
constexpr double kPelletReward = 50.0;
constexpr double kEatGhostReward = 200.0;
constexpr double kCaughtReward = -500.0;
constexpr double kGoalReward = 100.0;
constexpr double kCollisionReward = -10.0;

struct ActionDelta {
    int dx, dy;
};

// Order fixed; ids index these tables.
const std::vector<std::string> kPacActionNames = {
    "left", "right", "down", "up", "leftup", "leftdown", "rightup",
    "rightdown", "nowhere"};
const ActionDelta kPacActionDeltas[] = {{-1, 0}, {1, 0},  {0, 1},
                                        {0, -1}, {-1, -1}, {-1, 1},
                                        {1, -1}, {1, 1},  {0, 0}};

const std::vector<std::string> kCrossActionNames = {"up", "down", "nowhere"};
const ActionDelta kCrossActionDeltas[] = {{0, -1}, {0, 1}, {0, 0}};

// Ghost move preference order (also the legal-move list order).
const ActionDelta kStepDirs[] = {{-1, 0}, {1, 0}, {0, 1}, {0, -1}};

struct SpriteDef {
    int object_type;
    const char* name;
    Rgb primary;    // '#'
    Rgb secondary;  // 'o'
    const char* rows[kSpritePattern];
};

const SpriteDef kPacSprites[] = {
    {0,
     "pacman",
     {250, 210, 40},
     {130, 90, 0},
     {".####.", "######", "###ooo", "###ooo", "######", ".####."}},
    {1,
     "ghost",
     {235, 40, 40},
     {245, 245, 245},
     {".####.", "######", "#o##o#", "######", "######", "#.#.#."}},
    {2,
     "bean",
     {225, 185, 120},
     {160, 120, 60},
     {"......", "..##..", ".####.", ".####.", "..##..", "......"}},
    {3,
     "pellet",
     {230, 70, 230},
     {250, 250, 250},
     {"..##..", ".####.", "##oo##", "##oo##", ".####.", "..##.."}},
};

const SpriteDef kCrossSprites[] = {
    {0,
     "chicken",
     {245, 242, 230},
     {235, 150, 40},
     {"..##..", ".####.", ".####o", ".####.", "..##..", ".o..o."}},
    {1,
     "car",
     {240, 130, 40},
     {20, 20, 20},
     {"......", ".####.", "######", "######", ".o##o.", "......"}},
};

int sprite_px(int cell_px) { return cell_px - 2; }

SpriteBitmap build_sprite(const SpriteDef& def, Rgb bg, int cell_px) {
    const int s = sprite_px(cell_px);
    SpriteBitmap out;
    out.object_type = def.object_type;
    out.name = def.name;
    out.w = s;
    out.h = s;
    out.pixels.resize(static_cast<std::size_t>(s) * s * 3);
    for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
            const char c =
                def.rows[y * kSpritePattern / s][x * kSpritePattern / s];
            Rgb col = bg;
            if (c == '#') col = def.primary;
            else if (c == 'o') col = def.secondary;
            std::uint8_t* px = out.pixels.data() + (static_cast<std::size_t>(y) * s + x) * 3;
            px[0] = col.r;
            px[1] = col.g;
            px[2] = col.b;
        }
    }
    return out;
}

void blit(Frame& frame, const SpriteBitmap& sprite, int px, int py) {
    for (int y = 0; y < sprite.h; ++y) {
        std::uint8_t* dst = frame.px(py + y, px);
        const std::uint8_t* src = sprite.pixels.data() +
                                  static_cast<std::size_t>(y) * sprite.w * 3;
        std::copy(src, src + static_cast<std::size_t>(sprite.w) * 3, dst);
    }
}

Box cell_box(const EnvConfig& cfg, int cx, int cy) {
    const int s = sprite_px(cfg.cell_px);
    const int off = (cfg.cell_px - s) / 2;
    return {cx * cfg.cell_px + off, cy * cfg.cell_px + off, s, s};
}

bool in_bounds(const EnvConfig& cfg, int cx, int cy) {
    return cx >= 0 && cx < cfg.grid_w && cy >= 0 && cy < cfg.grid_h;
}

bool walkable(const EnvConfig& cfg, int cx, int cy) {
    return in_bounds(cfg, cx, cy) && !is_wall(cfg, cx, cy);
}

EnvState reset_minipac(const EnvConfig& cfg) {
    EnvState st;
    st.config = cfg;
    st.rng = Rng(cfg.seed);

    std::vector<std::pair<int, int>> free_cells;
    for (int cy = 0; cy < cfg.grid_h; ++cy)
        for (int cx = 0; cx < cfg.grid_w; ++cx)
            if (!is_wall(cfg, cx, cy)) free_cells.emplace_back(cx, cy);

    // Fisher-Yates with the episode stream, then assign in fixed order.
    for (std::size_t i = free_cells.size() - 1; i > 0; --i) {
        const std::size_t j = st.rng.uniform_int(static_cast<std::uint32_t>(i + 1));
        std::swap(free_cells[i], free_cells[j]);
    }

    const int free = static_cast<int>(free_cells.size());
    const int n_ghosts = std::min(2, std::max(1, free / 12));
    const int n_pellets = std::min(2, std::max(1, free / 12));
    const int n_beans = std::min(10, free - 1 - n_ghosts - n_pellets);

    std::size_t idx = 0;
    st.agent_x = free_cells[idx].first;
    st.agent_y = free_cells[idx].second;
    ++idx;
    for (int i = 0; i < n_ghosts; ++i, ++idx) {
        const auto [cx, cy] = free_cells[idx];
        st.ghosts.push_back({cx, cy, cx, cy, 0});
    }
    for (int i = 0; i < n_pellets; ++i, ++idx)
        st.pellets.push_back({free_cells[idx].first, free_cells[idx].second, true});
    for (int i = 0; i < n_beans; ++i, ++idx)
        st.beans.push_back({free_cells[idx].first, free_cells[idx].second, true});
    return st;
}

EnvState reset_minicross(const EnvConfig& cfg) {
    EnvState st;
    st.config = cfg;
    st.rng = Rng(cfg.seed);
    st.agent_x = cfg.grid_w / 2;
    st.agent_y = cfg.grid_h - 1;
    for (int row = 1; row <= cfg.grid_h - 2; ++row) {
        Car car;
        car.y = row;
        car.x = static_cast<int>(st.rng.uniform_int(static_cast<std::uint32_t>(cfg.grid_w)));
        car.dir = (row % 2 == 1) ? 1 : -1;
        st.cars.push_back(car);
    }
    return st;
}

double step_minipac(EnvState& st, int action) {
    const EnvConfig& cfg = st.config;
    double reward = 0.0;

    const ActionDelta d = kPacActionDeltas[action];
    if (walkable(cfg, st.agent_x + d.dx, st.agent_y + d.dy)) {
        st.agent_x += d.dx;
        st.agent_y += d.dy;
    }

    for (auto& bean : st.beans) {
        if (bean.alive && bean.x == st.agent_x && bean.y == st.agent_y) {
            bean.alive = false;
            reward += kBeanReward;
        }
    }
    for (auto& pellet : st.pellets) {
        if (pellet.alive && pellet.x == st.agent_x && pellet.y == st.agent_y) {
            pellet.alive = false;
            reward += kPelletReward;
            for (auto& ghost : st.ghosts) ghost.fright = kFrightSteps;
        }
    }

    auto collide = [&](Ghost& ghost) {
        if (ghost.x != st.agent_x || ghost.y != st.agent_y) return;
        if (ghost.fright > 0) {
            reward += kEatGhostReward;
            ghost.x = ghost.home_x;
            ghost.y = ghost.home_y;
            ghost.fright = 0;
        } else {
            reward += kCaughtReward;
            st.done = true;
        }
    };

    for (auto& ghost : st.ghosts) {
        if (st.done) break;
        collide(ghost);
    }

    if (!st.done) {
        for (auto& ghost : st.ghosts) {
            const double u = st.rng.uniform01();
            int legal[4][2];
            int n_legal = 0;
            for (const auto& dir : kStepDirs) {
                if (walkable(cfg, ghost.x + dir.dx, ghost.y + dir.dy)) {
                    legal[n_legal][0] = ghost.x + dir.dx;
                    legal[n_legal][1] = ghost.y + dir.dy;
                    ++n_legal;
                }
            }
            if (u < 0.2) {
                if (n_legal > 0) {
                    const int j = static_cast<int>(
                        st.rng.uniform_int(static_cast<std::uint32_t>(n_legal)));
                    ghost.x = legal[j][0];
                    ghost.y = legal[j][1];
                }
            } else if (n_legal > 0) {
                // Chase: minimize Manhattan distance to the agent after the
                // move; frightened ghosts flee (maximize). Ties take the
                // earliest candidate in kStepDirs order.
                int best = 0;
                int best_dist = std::abs(legal[0][0] - st.agent_x) +
                                std::abs(legal[0][1] - st.agent_y);
                for (int j = 1; j < n_legal; ++j) {
                    const int dist = std::abs(legal[j][0] - st.agent_x) +
                                     std::abs(legal[j][1] - st.agent_y);
                    const bool better =
                        ghost.fright > 0 ? dist > best_dist : dist < best_dist;
                    if (better) {
                        best = j;
                        best_dist = dist;
                    }
                }
                ghost.x = legal[best][0];
                ghost.y = legal[best][1];
            }
            collide(ghost);
            if (st.done) break;
        }
    }

    if (!st.done) {
        for (auto& ghost : st.ghosts)
            if (ghost.fright > 0) --ghost.fright;
        bool any_left = false;
        for (const auto& bean : st.beans) any_left |= bean.alive;
        for (const auto& pellet : st.pellets) any_left |= pellet.alive;
        if (!any_left) st.done = true;
    }
    return reward;
}

double step_minicross(EnvState& st, int action) {
    const EnvConfig& cfg = st.config;
    double reward = 0.0;

    const ActionDelta d = kCrossActionDeltas[action];
    const int ny = st.agent_y + d.dy;
    if (ny >= 0 && ny < cfg.grid_h) st.agent_y = ny;

    if (st.agent_y == 0) {
        reward += kGoalReward;
        st.agent_y = cfg.grid_h - 1;
    }

    for (const auto& car : st.cars) {
        if (car.x == st.agent_x && car.y == st.agent_y) {
            reward += kCollisionReward;
            st.agent_y = cfg.grid_h - 1;
            break;
        }
    }

    for (auto& car : st.cars) {
        const double u = st.rng.uniform01();
        if (u < 0.9) car.x = (car.x + car.dir + cfg.grid_w) % cfg.grid_w;
    }

    for (const auto& car : st.cars) {
        if (car.x == st.agent_x && car.y == st.agent_y) {
            reward += kCollisionReward;
            st.agent_y = cfg.grid_h - 1;
            break;
        }
    }
    return reward;
}

}  // namespace

EnvId parse_env_id(const std::string& name) {
    if (name == "minipac") return EnvId::minipac;
    if (name == "minicross") return EnvId::minicross;
    throw ConfigError("unknown env: '" + name + "' (expected minipac or minicross)");
}

std::string env_name(EnvId id) {
    return id == EnvId::minipac ? "minipac" : "minicross";
}

void validate(const EnvConfig& cfg) {
    if (cfg.grid_w < 5 || cfg.grid_h < 5)
        throw ConfigError("grid_w and grid_h must be >= 5");
    if (cfg.cell_px < 4) throw ConfigError("cell_px must be >= 4");
    if (cfg.max_steps < 1) throw ConfigError("max_steps must be >= 1");
}

EnvConfig env_config_from(KeyValueConfig& cfg) {
    EnvConfig out;
    out.env_id = parse_env_id(cfg.get_string("env"));
    out.grid_w = static_cast<int>(cfg.get_int("grid_w", 9));
    out.grid_h = static_cast<int>(cfg.get_int("grid_h", 9));
    out.cell_px = static_cast<int>(cfg.get_int("cell_px", 8));
    out.max_steps = static_cast<int>(cfg.get_int("max_steps", 200));
    out.seed = cfg.get_u64("seed", 1);
    validate(out);
    return out;
}

int action_count(EnvId id) {
    return id == EnvId::minipac ? 9 : 3;
}

const std::vector<std::string>& action_names(EnvId id) {
    return id == EnvId::minipac ? kPacActionNames : kCrossActionNames;
}

bool is_wall(const EnvConfig& cfg, int cx, int cy) {
    if (cfg.env_id != EnvId::minipac) return false;
    if (cx == 0 || cy == 0 || cx == cfg.grid_w - 1 || cy == cfg.grid_h - 1)
        return true;
    return cx % 2 == 0 && cy % 2 == 0;
}

EnvState reset(const EnvConfig& cfg) {
    validate(cfg);
    return cfg.env_id == EnvId::minipac ? reset_minipac(cfg)
                                        : reset_minicross(cfg);
}

StepResult step(EnvState& st, int action) {
    if (st.done) throw UsageError("step called on a finished episode");
    if (action < 0 || action >= action_count(st.config.env_id))
        throw UsageError("action id out of range: " + std::to_string(action));

    const double reward = st.config.env_id == EnvId::minipac
                              ? step_minipac(st, action)
                              : step_minicross(st, action);

    ++st.step_count;
    if (st.step_count >= st.config.max_steps) st.done = true;
    st.score += reward;
    return {render(st), reward, st.done};
}

Frame render(const EnvState& st) {
    const EnvConfig& cfg = st.config;
    Frame frame(cfg.grid_h * cfg.cell_px, cfg.grid_w * cfg.cell_px);
    frame.fill(background_color(cfg.env_id));

    const auto bitmaps = sprites(cfg.env_id, cfg.cell_px);
    auto draw = [&](int type, int cx, int cy) {
        if (!in_bounds(cfg, cx, cy)) return;  // nothing drawn off-grid
        const Box box = cell_box(cfg, cx, cy);
        blit(frame, bitmaps[static_cast<std::size_t>(type)], box.x, box.y);
    };

    if (cfg.env_id == EnvId::minipac) {
        for (const auto& bean : st.beans)
            if (bean.alive) draw(2, bean.x, bean.y);
        for (const auto& pellet : st.pellets)
            if (pellet.alive) draw(3, pellet.x, pellet.y);
        for (const auto& ghost : st.ghosts) draw(1, ghost.x, ghost.y);
        draw(0, st.agent_x, st.agent_y);
    } else {
        for (const auto& car : st.cars) draw(1, car.x, car.y);
        draw(0, st.agent_x, st.agent_y);
    }
    return frame;
}

std::vector<GroundTruthBox> ground_truth(const EnvState& st) {
    const EnvConfig& cfg = st.config;
    std::vector<GroundTruthBox> out;
    auto add = [&](int type, int cx, int cy) {
        out.push_back({type, cell_box(cfg, cx, cy)});
    };
    add(0, st.agent_x, st.agent_y);
    if (cfg.env_id == EnvId::minipac) {
        for (const auto& ghost : st.ghosts) add(1, ghost.x, ghost.y);
        for (const auto& bean : st.beans)
            if (bean.alive) add(2, bean.x, bean.y);
        for (const auto& pellet : st.pellets)
            if (pellet.alive) add(3, pellet.x, pellet.y);
    } else {
        for (const auto& car : st.cars) add(1, car.x, car.y);
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        if (a.object_type != b.object_type) return a.object_type < b.object_type;
        if (a.box.y != b.box.y) return a.box.y < b.box.y;
        return a.box.x < b.box.x;
    });
    return out;
}

int object_type_count(EnvId id) { return id == EnvId::minipac ? 4 : 2; }

std::string type_name(EnvId id, int object_type) {
    const auto defs = id == EnvId::minipac
                          ? std::pair(kPacSprites, 4)
                          : std::pair(kCrossSprites, 2);
    if (object_type < 0 || object_type >= defs.second)
        throw UsageError("object type out of range: " + std::to_string(object_type));
    return defs.first[object_type].name;
}

Rgb background_color(EnvId id) {
    return id == EnvId::minipac ? Rgb{12, 12, 36} : Rgb{28, 32, 28};
}

double max_abs_reward(EnvId id) {
    return id == EnvId::minipac ? 500.0 : 100.0;
}

std::vector<SpriteBitmap> sprites(EnvId id, int cell_px) {
    if (cell_px < 4) throw ConfigError("cell_px must be >= 4");
    const Rgb bg = background_color(id);
    std::vector<SpriteBitmap> out;
    if (id == EnvId::minipac) {
        for (const auto& def : kPacSprites) out.push_back(build_sprite(def, bg, cell_px));
    } else {
        for (const auto& def : kCrossSprites) out.push_back(build_sprite(def, bg, cell_px));
    }
    return out;
}

std::vector<std::array<int, 3>> layout_of(const EnvState& st) {
    std::vector<std::array<int, 3>> rows;
    rows.push_back({0, st.agent_x, st.agent_y});
    if (st.config.env_id == EnvId::minipac) {
        for (const auto& ghost : st.ghosts) rows.push_back({1, ghost.x, ghost.y});
        for (const auto& bean : st.beans)
            if (bean.alive) rows.push_back({2, bean.x, bean.y});
        for (const auto& pellet : st.pellets)
            if (pellet.alive) rows.push_back({3, pellet.x, pellet.y});
    } else {
        for (const auto& car : st.cars) rows.push_back({1, car.x, car.y});
    }
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
        if (a[0] != b[0]) return a[0] < b[0];
        if (a[2] != b[2]) return a[2] < b[2];
        return a[1] < b[1];
    });
    return rows;
}

void write_layout(const std::string& path, const EnvState& st) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (const auto& row : layout_of(st))
        out << row[0] << " " << row[1] << " " << row[2] << "\n";
    if (!out) throw IoError("write failed: " + path);
}

std::vector<std::array<int, 3>> read_layout(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::vector<std::array<int, 3>> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        int type, x, y;
        if (!(ls >> type >> x >> y))
            throw IoError(path + ":" + std::to_string(lineno) +
                          ": expected 'type x y'");
        rows.push_back({type, x, y});
    }
    return rows;
}

}  // namespace odrl::envsim
