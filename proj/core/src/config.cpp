#include "voldiff/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "voldiff/errors.hpp"

namespace voldiff {

namespace {

std::string trim(const std::string& s) {
    const size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Typed access to one section with unknown-key detection.
class SectionReader {
public:
    SectionReader(const IniDoc& doc, std::string sec, std::string origin)
        : sec_(std::move(sec)), origin_(std::move(origin)) {
        auto it = doc.sections.find(sec_);
        if (it != doc.sections.end()) entries_ = &it->second;
    }

    std::string str(const std::string& key, const std::string& dflt) {
        const IniDoc::Entry* e = take(key);
        return e ? e->value : dflt;
    }

    int64_t i64(const std::string& key, int64_t dflt) {
        const IniDoc::Entry* e = take(key);
        if (!e) return dflt;
        try {
            size_t pos = 0;
            const int64_t v = std::stoll(e->value, &pos);
            if (pos != e->value.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw ConfigError(where(e) + ": '" + key + "' must be an integer, got '" + e->value + "'");
        }
    }

    uint64_t u64_required(const std::string& key) {
        const IniDoc::Entry* e = take(key);
        if (!e)
            throw ConfigError(origin_ + ": missing mandatory key '" + key + "'" +
                              (sec_.empty() ? "" : " in section [" + sec_ + "]"));
        try {
            size_t pos = 0;
            const uint64_t v = std::stoull(e->value, &pos);
            if (pos != e->value.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw ConfigError(where(e) + ": '" + key + "' must be a non-negative integer, got '" +
                              e->value + "'");
        }
    }

    double f64(const std::string& key, double dflt) {
        const IniDoc::Entry* e = take(key);
        if (!e) return dflt;
        try {
            size_t pos = 0;
            const double v = std::stod(e->value, &pos);
            if (pos != e->value.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw ConfigError(where(e) + ": '" + key + "' must be a number, got '" + e->value + "'");
        }
    }

    bool flag(const std::string& key, bool dflt) {
        const IniDoc::Entry* e = take(key);
        if (!e) return dflt;
        const std::string& v = e->value;
        if (v == "true" || v == "yes" || v == "1") return true;
        if (v == "false" || v == "no" || v == "0") return false;
        throw ConfigError(where(e) + ": '" + key + "' must be a boolean, got '" + v + "'");
    }

    std::array<int64_t, 3> i64_triple(const std::string& key, std::array<int64_t, 3> dflt) {
        const IniDoc::Entry* e = take(key);
        if (!e) return dflt;
        std::array<int64_t, 3> out{};
        std::stringstream ss(e->value);
        std::string cell;
        size_t n = 0;
        while (std::getline(ss, cell, ',')) {
            cell = trim(cell);
            if (n >= 3 || cell.empty()) { n = 4; break; }
            try {
                size_t pos = 0;
                out[n] = std::stoll(cell, &pos);
                if (pos != cell.size()) throw std::invalid_argument("trailing");
            } catch (const std::exception&) { n = 4; break; }
            ++n;
        }
        if (n != 3)
            throw ConfigError(where(e) + ": '" + key + "' must be three comma-separated integers");
        return out;
    }

    void finish() const {
        if (!entries_) return;
        for (const auto& [key, e] : *entries_)
            if (!used_.count(key))
                throw ConfigError(where(&e) + ": unknown key '" + key + "'" +
                                  (sec_.empty() ? "" : " in section [" + sec_ + "]"));
    }

private:
    const IniDoc::Entry* take(const std::string& key) {
        if (!entries_) return nullptr;
        auto it = entries_->find(key);
        if (it == entries_->end()) return nullptr;
        used_.insert(key);
        return &it->second;
    }

    std::string where(const IniDoc::Entry* e) const {
        return origin_ + ":" + std::to_string(e->line);
    }

    const std::map<std::string, IniDoc::Entry>* entries_ = nullptr;
    std::set<std::string> used_;
    std::string sec_;
    std::string origin_;
};

}  // namespace

IniDoc parse_ini_text(const std::string& text, const std::string& origin) {
    IniDoc doc;
    std::stringstream ss(text);
    std::string line, sec;
    int ln = 0;
    while (std::getline(ss, line)) {
        ++ln;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError(origin + ":" + std::to_string(ln) + ": malformed section header");
            sec = trim(line.substr(1, line.size() - 2));
            if (sec.empty())
                throw ConfigError(origin + ":" + std::to_string(ln) + ": empty section name");
            doc.sections[sec];
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(ln) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(origin + ":" + std::to_string(ln) + ": empty key");
        auto& entries = doc.sections[sec];
        if (entries.count(key))
            throw ConfigError(origin + ":" + std::to_string(ln) + ": duplicate key '" + key + "'");
        entries[key] = {val, ln};
    }
    return doc;
}

IniDoc parse_ini_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_ini_text(buf.str(), path.string());
}

void RunConfig::validate() const {
    if (workdir.empty()) throw ConfigError("RunConfig: workdir must not be empty");
    if (records < 2) throw ConfigError("RunConfig: records must be >= 2");
    if (!(val_fraction > 0.0 && val_fraction < 1.0))
        throw ConfigError("RunConfig: val_fraction must be in (0,1)");
    if (!(preprocess.clip_low >= 0.0 && preprocess.clip_low < preprocess.clip_high &&
          preprocess.clip_high <= 100.0))
        throw ConfigError("RunConfig: need 0 <= clip_low < clip_high <= 100");
    if (preprocess.trim_top < 0 || preprocess.trim_bottom < 0)
        throw ConfigError("RunConfig: trim counts must be >= 0");
    {
        const auto& t = preprocess.target_dims;
        const bool none = t[0] == 0 && t[1] == 0 && t[2] == 0;
        const bool all = t[0] > 0 && t[1] > 0 && t[2] > 0;
        if (!none && !all)
            throw ConfigError("RunConfig: target_dims must be all zero (keep grid) or all positive");
    }
    if (unet.in_channels != 4 || unet.out_channels != 2)
        throw ConfigError("RunConfig: segmentation net must map 4 channels to 2");
    if (denoiser.in_channels != 5 || denoiser.out_channels != 1 || !denoiser.use_time_embedding)
        throw ConfigError("RunConfig: denoiser must map 5 channels to 1 with time embedding");
    unet.validate();
    denoiser.validate();
    diffusion.validate();
    if (unet_train.steps < 1 || diff_train.steps < 1)
        throw ConfigError("RunConfig: training steps must be >= 1");
    if (!(unet_train.lr > 0.0) || !(diff_train.lr > 0.0))
        throw ConfigError("RunConfig: learning rates must be > 0");
    if (degrade_dilate < 0) throw ConfigError("RunConfig: degrade_dilate must be >= 0");
    if (eval_pred != "mi" && eval_pred != "mcorr")
        throw ConfigError("RunConfig: eval pred must be 'mi' or 'mcorr'");
}

RunConfig load_run_config(const std::filesystem::path& path) {
    const IniDoc doc = parse_ini_file(path);
    const std::string origin = path.string();

    static const std::set<std::string> kKnown = {"",     "data",       "preprocess",
                                                 "unet", "unet.train", "denoiser",
                                                 "diffusion", "diffusion.train", "refine", "eval"};
    for (const auto& [sec, entries] : doc.sections) {
        (void)entries;
        if (!kKnown.count(sec)) throw ConfigError(origin + ": unknown section [" + sec + "]");
    }

    RunConfig rc;

    SectionReader top(doc, "", origin);
    rc.seed = top.u64_required("seed");
    top.finish();

    SectionReader data(doc, "data", origin);
    rc.workdir = data.str("workdir", "work");
    rc.phantom_config = data.str("phantom_config", "");
    rc.records = data.i64("records", 60);
    rc.val_fraction = data.f64("val_fraction", 0.2);
    data.finish();

    SectionReader pre(doc, "preprocess", origin);
    rc.preprocess.clip_low = pre.f64("clip_low", 1.0);
    rc.preprocess.clip_high = pre.f64("clip_high", 99.0);
    rc.preprocess.trim_top = pre.i64("trim_top", 0);
    rc.preprocess.trim_bottom = pre.i64("trim_bottom", 0);
    rc.preprocess.target_dims = pre.i64_triple("target_dims", {0, 0, 0});
    {
        const std::string m = pre.str("interp", "trilinear");
        if (m == "trilinear")
            rc.preprocess.interp = Interp::Trilinear;
        else if (m == "nearest")
            rc.preprocess.interp = Interp::Nearest;
        else
            throw ConfigError(origin + ": interp must be 'trilinear' or 'nearest', got '" + m + "'");
    }
    pre.finish();

    SectionReader unet(doc, "unet", origin);
    rc.unet.in_channels = 4;
    rc.unet.out_channels = 2;
    rc.unet.levels = unet.i64("levels", 3);
    rc.unet.base_channels = unet.i64("base_channels", 8);
    rc.unet.use_time_embedding = false;
    unet.finish();

    SectionReader ut(doc, "unet.train", origin);
    rc.unet_train.steps = ut.i64("steps", 1500);
    rc.unet_train.lr = ut.f64("lr", 7e-4);
    rc.unet_train.dice_smooth = ut.f64("dice_smooth", 1.0);
    rc.degrade_dilate = ut.i64("degrade_dilate", 0);
    ut.finish();

    SectionReader den(doc, "denoiser", origin);
    rc.denoiser.in_channels = 5;
    rc.denoiser.out_channels = 1;
    rc.denoiser.levels = den.i64("levels", 3);
    rc.denoiser.base_channels = den.i64("base_channels", 8);
    rc.denoiser.use_time_embedding = true;
    rc.denoiser.time_embed_dim = den.i64("time_embed_dim", 32);
    den.finish();

    SectionReader diff(doc, "diffusion", origin);
    rc.diffusion.T = diff.i64("T", 200);
    rc.diffusion.beta_start = diff.f64("beta_start", 1e-4);
    rc.diffusion.beta_end = diff.f64("beta_end", 0.02);
    {
        const std::string m = diff.str("loss", "bce-dice-x0");
        if (m == "eps-mse")
            rc.diffusion.mode = DiffusionLossMode::EpsMse;
        else if (m == "bce-dice-x0")
            rc.diffusion.mode = DiffusionLossMode::BceDiceX0;
        else if (m == "literal-squash")
            rc.diffusion.mode = DiffusionLossMode::LiteralSquash;
        else
            throw ConfigError(origin +
                              ": loss must be 'eps-mse', 'bce-dice-x0' or 'literal-squash', got '" +
                              m + "'");
    }
    rc.diffusion.lambda = diff.f64("lambda", 1.0);
    rc.diffusion.dice_smooth = diff.f64("dice_smooth", 1.0);
    diff.finish();

    SectionReader dt(doc, "diffusion.train", origin);
    rc.diff_train.steps = dt.i64("steps", 3000);
    rc.diff_train.lr = dt.f64("lr", 3e-4);
    rc.diff_train.weight_decay = dt.f64("weight_decay", 1e-5);
    dt.finish();

    SectionReader ref(doc, "refine", origin);
    {
        const std::string m = ref.str("sign", "minus");
        if (m == "minus")
            rc.refine.sign = CorrectionSign::Minus;
        else if (m == "plus")
            rc.refine.sign = CorrectionSign::Plus;
        else
            throw ConfigError(origin + ": sign must be 'minus' or 'plus', got '" + m + "'");
    }
    rc.refine.deterministic = ref.flag("deterministic", true);
    rc.refine.dump_pgm = ref.flag("dump_pgm", false);
    ref.finish();

    SectionReader ev(doc, "eval", origin);
    rc.eval_pred = ev.str("pred", "mcorr");
    ev.finish();

    // paths are relative to the config file so runs don't depend on the CWD
    const std::filesystem::path dir = path.parent_path();
    if (rc.workdir.is_relative()) rc.workdir = dir / rc.workdir;
    if (!rc.phantom_config.empty() && rc.phantom_config.is_relative())
        rc.phantom_config = dir / rc.phantom_config;

    rc.validate();
    return rc;
}

}  // namespace voldiff
