#include "dvp/config.hpp"

#include <fstream>
#include <map>
#include <sstream>

namespace dvp {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

std::vector<ScaleSpec> parse_scales(const std::string& v) {
  std::vector<ScaleSpec> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    const size_t colon = item.find(':');
    if (colon == std::string::npos)
      throw UsageError("config: latent_scales entries must look like side:layers");
    out.push_back({std::stoi(item.substr(0, colon)),
                   std::stoi(item.substr(colon + 1))});
  }
  if (out.empty()) throw UsageError("config: latent_scales is empty");
  return out;
}

std::string scales_to_string(const std::vector<ScaleSpec>& scales) {
  std::ostringstream os;
  for (size_t i = 0; i < scales.size(); ++i)
    os << (i ? "," : "") << scales[i].side << ":" << scales[i].layers;
  return os.str();
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1) throw UsageError("config: epochs and batch_size must be >= 1");
  if (warmup_epochs < 0 || warmup_epochs >= epochs)
    throw UsageError("config: warmup epochs must be smaller than epochs");
  if (clip_norm <= 0) throw UsageError("config: clip_norm must be > 0");
  if (!(ema_rate > 0 && ema_rate < 1)) throw UsageError("config: ema_rate must lie in (0,1)");
  if (lr_start <= 0 || lr_end <= 0) throw UsageError("config: learning rates must be > 0");
  if (subset < 0 || val_images < 0 || ckpt_every < 1)
    throw UsageError("config: invalid subset/val/ckpt settings");
  if (micro_batch < 0) throw UsageError("config: micro_batch must be >= 0");
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::map<std::string, std::string> kv;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty() || val.empty())
      throw UsageError("config line " + std::to_string(lineno) + ": empty key or value");
    if (kv.count(key))
      throw UsageError("config line " + std::to_string(lineno) + ": repeated key " + key);
    kv[key] = val;
  }

  auto take = [&](const char* key) -> std::string {
    auto it = kv.find(key);
    if (it == kv.end()) return "";
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  auto take_int = [&](const char* key, int& slot) {
    const std::string v = take(key);
    if (!v.empty()) slot = std::stoi(v);
  };
  auto take_double = [&](const char* key, double& slot) {
    const std::string v = take(key);
    if (!v.empty()) slot = std::stod(v);
  };
  auto take_onoff = [&](const char* key, bool& slot) {
    const std::string v = take(key);
    if (v.empty()) return;
    if (v == "on")
      slot = true;
    else if (v == "off")
      slot = false;
    else
      throw UsageError(std::string("config: ") + key + " must be on or off");
  };

  take_int("image_side", cfg.model.image_side);
  take_int("image_channels", cfg.model.image_channels);
  {
    const std::string v = take("latent_scales");
    if (!v.empty()) cfg.model.scales = parse_scales(v);
  }
  take_int("latent_width", cfg.model.latent_width);
  take_int("enc_blocks", cfg.model.enc_blocks);
  take_int("ch_in", cfg.model.ch_in);
  take_int("ch_hid", cfg.model.ch_hid);
  {
    const std::string v = take("likelihood");
    if (!v.empty()) cfg.model.likelihood = v;
  }
  {
    const std::string v = take("likelihood_input");
    if (!v.empty()) {
      if (v == "aggregate")
        cfg.model.latent_aggregation = true;
      else if (v == "hdec")
        cfg.model.latent_aggregation = false;
      else
        throw UsageError("config: likelihood_input must be aggregate or hdec");
    }
  }
  take_onoff("pseudoinput", cfg.model.use_pseudoinput);
  take_int("pseudo_side", cfg.model.pseudo_side);
  take_int("diff_steps", cfg.model.diff_steps);
  take_int("diff_blocks", cfg.model.diff_blocks);
  take_int("diff_channels", cfg.model.diff_channels);
  take_double("logsnr_min", cfg.model.logsnr_min);
  take_double("logsnr_max", cfg.model.logsnr_max);
  take_double("logsig_init", cfg.model.logsig_init);

  take_int("epochs", cfg.train.epochs);
  take_int("batch_size", cfg.train.batch_size);
  take_int("micro_batch", cfg.train.micro_batch);
  take_double("lr_start", cfg.train.lr_start);
  take_double("lr_end", cfg.train.lr_end);
  take_int("warmup_epochs", cfg.train.warmup_epochs);
  take_double("weight_decay", cfg.train.weight_decay);
  take_double("ema_rate", cfg.train.ema_rate);
  take_double("clip_norm", cfg.train.clip_norm);
  {
    const std::string v = take("seed");
    if (!v.empty()) cfg.train.seed = std::stoull(v);
  }
  take_int("subset", cfg.train.subset);
  take_int("val_images", cfg.train.val_images);
  take_int("ckpt_every", cfg.train.ckpt_every);

  if (!kv.empty())
    throw UsageError("config: unknown key " + kv.begin()->first);
  cfg.model.validate();
  cfg.train.validate();
  return cfg;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot open config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream os;
  os << "image_side = " << cfg.model.image_side << "\n";
  os << "image_channels = " << cfg.model.image_channels << "\n";
  os << "latent_scales = " << scales_to_string(cfg.model.scales) << "\n";
  os << "latent_width = " << cfg.model.latent_width << "\n";
  os << "enc_blocks = " << cfg.model.enc_blocks << "\n";
  os << "ch_in = " << cfg.model.ch_in << "\n";
  os << "ch_hid = " << cfg.model.ch_hid << "\n";
  os << "likelihood = " << cfg.model.likelihood << "\n";
  os << "likelihood_input = " << (cfg.model.latent_aggregation ? "aggregate" : "hdec") << "\n";
  os << "pseudoinput = " << (cfg.model.use_pseudoinput ? "on" : "off") << "\n";
  os << "pseudo_side = " << cfg.model.pseudo_side << "\n";
  os << "diff_steps = " << cfg.model.diff_steps << "\n";
  os << "diff_blocks = " << cfg.model.diff_blocks << "\n";
  os << "diff_channels = " << cfg.model.diff_channels << "\n";
  os << "logsnr_min = " << fmt_double(cfg.model.logsnr_min) << "\n";
  os << "logsnr_max = " << fmt_double(cfg.model.logsnr_max) << "\n";
  os << "logsig_init = " << fmt_double(cfg.model.logsig_init) << "\n";
  os << "epochs = " << cfg.train.epochs << "\n";
  os << "batch_size = " << cfg.train.batch_size << "\n";
  os << "micro_batch = " << cfg.train.micro_batch << "\n";
  os << "lr_start = " << fmt_double(cfg.train.lr_start) << "\n";
  os << "lr_end = " << fmt_double(cfg.train.lr_end) << "\n";
  os << "warmup_epochs = " << cfg.train.warmup_epochs << "\n";
  os << "weight_decay = " << fmt_double(cfg.train.weight_decay) << "\n";
  os << "ema_rate = " << fmt_double(cfg.train.ema_rate) << "\n";
  os << "clip_norm = " << fmt_double(cfg.train.clip_norm) << "\n";
  os << "seed = " << cfg.train.seed << "\n";
  os << "subset = " << cfg.train.subset << "\n";
  os << "val_images = " << cfg.train.val_images << "\n";
  os << "ckpt_every = " << cfg.train.ckpt_every << "\n";
  return os.str();
}

}  // namespace dvp
