#include "pcdc/config.hpp"

#include <fstream>
#include <sstream>

namespace pcdc {

double RunConfig::resolve_rmax(int height, int width) const {
    if (rmax_bits > 0) return rmax_bits;
    if (target_ratio > 0) return 24.0 * double(height) * double(width) / target_ratio;
    throw Error("no bitrate budget: set rmax_bits or target_ratio");
}

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

double parse_num(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw DataError("config: bad numeric value for " + key + ": '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw DataError("config: bad boolean value for " + key + ": '" + v + "'");
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = trim(line);
        if (s.empty() || s[0] == '#') continue;
        size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw DataError("config: line " + std::to_string(lineno) + " is not 'key = value'");
        std::string key = trim(s.substr(0, eq));
        std::string val = trim(s.substr(eq + 1));

        if (key == "block_size") cfg.block_size = int(parse_num(key, val));
        else if (key == "k_levels") cfg.k_levels = int(parse_num(key, val));
        else if (key == "latent_channels") cfg.latent_channels = int(parse_num(key, val));
        else if (key == "schedule_steps") cfg.schedule_steps = int(parse_num(key, val));
        else if (key == "decode_steps") cfg.decode_steps = int(parse_num(key, val));
        else if (key == "adapt_decode_steps") cfg.adapt_decode_steps = int(parse_num(key, val));
        else if (key == "train_steps") cfg.train_steps = int(parse_num(key, val));
        else if (key == "train_crop") cfg.train_crop = int(parse_num(key, val));
        else if (key == "train_lr") cfg.train_lr = parse_num(key, val);
        else if (key == "train_rate_weight") cfg.train_rate_weight = parse_num(key, val);
        else if (key == "train_scale_weight") cfg.train_scale_weight = parse_num(key, val);
        else if (key == "rmax_bits") cfg.rmax_bits = parse_num(key, val);
        else if (key == "target_ratio") cfg.target_ratio = parse_num(key, val);
        else if (key == "clip") cfg.ppo.clip = parse_num(key, val);
        else if (key == "entropy_weight") cfg.ppo.entropy_weight = parse_num(key, val);
        else if (key == "actor_lr") cfg.ppo.actor_lr = parse_num(key, val);
        else if (key == "critic_lr") cfg.ppo.critic_lr = parse_num(key, val);
        else if (key == "epochs") cfg.ppo.epochs = int(parse_num(key, val));
        else if (key == "episodes_per_epoch") cfg.ppo.episodes_per_epoch = int(parse_num(key, val));
        else if (key == "updates_per_epoch") cfg.ppo.updates_per_epoch = int(parse_num(key, val));
        else if (key == "normalize_advantages") cfg.ppo.normalize_advantages = parse_bool(key, val);
        else if (key == "mask_enabled") cfg.ppo.mask_enabled = parse_bool(key, val);
        else if (key == "greedy") cfg.ppo.greedy = parse_bool(key, val);
        else if (key == "dual_rho") cfg.dual_rho = parse_num(key, val);
        else if (key == "reset_per_image") cfg.reset_per_image = parse_bool(key, val);
        else if (key == "lambda_p") cfg.weights.pixel = parse_num(key, val);
        else if (key == "lambda_s") cfg.weights.structural = parse_num(key, val);
        else if (key == "lambda_l") cfg.weights.lpips = parse_num(key, val);
        else if (key == "lambda_d") cfg.weights.dists = parse_num(key, val);
        else if (key == "seed") cfg.seed = uint64_t(parse_num(key, val));
        else throw DataError("config: unknown key '" + key + "'");
    }
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

std::string serialize_config(const RunConfig& cfg) {
    std::ostringstream os;
    os.precision(17);
    os << "block_size = " << cfg.block_size << "\n";
    os << "k_levels = " << cfg.k_levels << "\n";
    os << "latent_channels = " << cfg.latent_channels << "\n";
    os << "schedule_steps = " << cfg.schedule_steps << "\n";
    os << "decode_steps = " << cfg.decode_steps << "\n";
    os << "adapt_decode_steps = " << cfg.adapt_decode_steps << "\n";
    os << "train_steps = " << cfg.train_steps << "\n";
    os << "train_crop = " << cfg.train_crop << "\n";
    os << "train_lr = " << cfg.train_lr << "\n";
    os << "train_rate_weight = " << cfg.train_rate_weight << "\n";
    os << "train_scale_weight = " << cfg.train_scale_weight << "\n";
    os << "rmax_bits = " << cfg.rmax_bits << "\n";
    os << "target_ratio = " << cfg.target_ratio << "\n";
    os << "clip = " << cfg.ppo.clip << "\n";
    os << "entropy_weight = " << cfg.ppo.entropy_weight << "\n";
    os << "actor_lr = " << cfg.ppo.actor_lr << "\n";
    os << "critic_lr = " << cfg.ppo.critic_lr << "\n";
    os << "epochs = " << cfg.ppo.epochs << "\n";
    os << "episodes_per_epoch = " << cfg.ppo.episodes_per_epoch << "\n";
    os << "updates_per_epoch = " << cfg.ppo.updates_per_epoch << "\n";
    os << "normalize_advantages = " << (cfg.ppo.normalize_advantages ? "true" : "false") << "\n";
    os << "mask_enabled = " << (cfg.ppo.mask_enabled ? "true" : "false") << "\n";
    os << "greedy = " << (cfg.ppo.greedy ? "true" : "false") << "\n";
    os << "dual_rho = " << cfg.dual_rho << "\n";
    os << "reset_per_image = " << (cfg.reset_per_image ? "true" : "false") << "\n";
    os << "lambda_p = " << cfg.weights.pixel << "\n";
    os << "lambda_s = " << cfg.weights.structural << "\n";
    os << "lambda_l = " << cfg.weights.lpips << "\n";
    os << "lambda_d = " << cfg.weights.dists << "\n";
    os << "seed = " << cfg.seed << "\n";
    return os.str();
}

}  // namespace pcdc
