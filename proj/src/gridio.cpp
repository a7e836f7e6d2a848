#include "saconv/gridio.hpp"

#include <bit>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace saconv::io {

using njson = nlohmann::ordered_json;

namespace {

constexpr const char* kGridMagic = "saconv-grid v1";
constexpr const char* kCheckpointMagic = "saconv-checkpoint v1";
constexpr const char* kSeparator = "---";

void append_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_f64_le(std::string& out, double v) {
    append_u64_le(out, std::bit_cast<std::uint64_t>(v));
}

void append_f32_le(std::string& out, float v) {
    std::uint32_t u = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

double read_f64_le(const std::string& buf, std::size_t off) {
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) {
        u |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
    }
    return std::bit_cast<double>(u);
}

float read_f32_le(const std::string& buf, std::size_t off) {
    std::uint32_t u = 0;
    for (int i = 0; i < 4; ++i) {
        u |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
    }
    return std::bit_cast<float>(u);
}

std::string num_str(double v) { return njson(v).dump(); }

// consume one '\n'-terminated line starting at off
std::string take_line(const std::string& buf, std::size_t& off, const fs::path& path) {
    std::size_t nl = buf.find('\n', off);
    if (nl == std::string::npos) {
        throw IoError(path.string() + ": truncated header");
    }
    std::string line = buf.substr(off, nl - off);
    off = nl + 1;
    return line;
}

njson parse_json(const std::string& text, const std::string& context) {
    njson j = njson::parse(text, nullptr, false);
    if (j.is_discarded()) throw InputError(context + ": invalid JSON");
    return j;
}

void check_known_keys(const njson& j, const std::vector<std::string>& known,
                      const std::string& context) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
            throw ConfigError(context + ": unknown key '" + it.key() + "'");
        }
    }
}

}  // namespace

void write_file_atomic(const fs::path& path, const std::string& bytes) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string());
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    if (!in.good() && !in.eof()) throw IoError("read failed for " + path.string());
    return ss.str();
}

// ---------------------------------------------------------------------------
// Grid series
// ---------------------------------------------------------------------------

void write_grid_series(const fs::path& path, const DailyGridSeries& s) {
    s.validate();
    njson meta;
    meta["variable"] = s.variable;
    meta["n_days"] = s.n_days();
    meta["n_lat"] = s.n_lat();
    meta["n_lon"] = s.n_lon();
    meta["lat"] = s.lat;
    meta["lon"] = s.lon;
    njson dates = njson::array();
    for (const Date& d : s.dates) dates.push_back(d.iso());
    meta["dates"] = dates;

    std::string out;
    out += kGridMagic;
    out += '\n';
    out += meta.dump();
    out += '\n';
    out += kSeparator;
    out += '\n';
    out.reserve(out.size() + s.grids.size() * s.grids.front().data.size() * 4);
    for (const Tensor& g : s.grids) {
        for (double v : g.data) append_f32_le(out, static_cast<float>(v));
    }
    write_file_atomic(path, out);
}

DailyGridSeries read_grid_series(const fs::path& path) {
    std::string buf = read_file(path);
    std::size_t off = 0;
    if (take_line(buf, off, path) != kGridMagic) {
        throw InputError(path.string() + ": not a grid series file (bad format line)");
    }
    njson meta = parse_json(take_line(buf, off, path), path.string());
    if (take_line(buf, off, path) != kSeparator) {
        throw InputError(path.string() + ": missing header separator");
    }
    DailyGridSeries s;
    s.variable = meta.at("variable").get<std::string>();
    s.lat = meta.at("lat").get<std::vector<double>>();
    s.lon = meta.at("lon").get<std::vector<double>>();
    int n_days = meta.at("n_days").get<int>();
    int n_lat = meta.at("n_lat").get<int>();
    int n_lon = meta.at("n_lon").get<int>();
    if (n_lat != s.n_lat() || n_lon != s.n_lon()) {
        throw InputError(path.string() + ": coordinate lengths disagree with dims");
    }
    for (const auto& d : meta.at("dates")) s.dates.push_back(Date::parse(d.get<std::string>()));
    if (static_cast<int>(s.dates.size()) != n_days) {
        throw InputError(path.string() + ": " + std::to_string(s.dates.size()) +
                         " dates for n_days=" + std::to_string(n_days));
    }
    std::size_t cells = static_cast<std::size_t>(n_lat) * static_cast<std::size_t>(n_lon);
    std::size_t expected = static_cast<std::size_t>(n_days) * cells * 4;
    if (buf.size() - off != expected) {
        throw InputError(path.string() + ": payload of " + std::to_string(buf.size() - off) +
                         " bytes, expected " + std::to_string(expected));
    }
    for (int d = 0; d < n_days; ++d) {
        Tensor g({n_lat, n_lon});
        for (std::size_t i = 0; i < cells; ++i) {
            g.data[i] = static_cast<double>(read_f32_le(buf, off));
            off += 4;
        }
        s.grids.push_back(std::move(g));
    }
    s.validate();
    return s;
}

// ---------------------------------------------------------------------------
// CSV series
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return out;
}

double parse_double(const std::string& s, const fs::path& path, int line_no,
                    const std::string& column) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw InputError(path.string() + ":" + std::to_string(line_no) + ": bad " + column +
                         " value '" + s + "'");
    }
}

}  // namespace

void write_precip_csv(const fs::path& path, const PrecipSeries& s) {
    std::string out = "date,value\n";
    for (std::size_t i = 0; i < s.dates.size(); ++i) {
        out += s.dates[i].iso();
        out += ',';
        out += num_str(s.values[i]);
        out += '\n';
    }
    write_file_atomic(path, out);
}

PrecipSeries read_precip_csv(const fs::path& path) {
    std::istringstream in(read_file(path));
    std::string line;
    if (!std::getline(in, line)) throw InputError(path.string() + ": empty file");
    auto header = split_csv_line(line);
    if (header.size() != 2 || header[0] != "date" || header[1] != "value") {
        std::string missing = header.empty() || header[0] != "date" ? "date" : "value";
        throw InputError(path.string() + ":1: expected header 'date,value' (missing '" +
                         missing + "' column)");
    }
    PrecipSeries s;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != 2) {
            throw InputError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                             "2 fields, got " + std::to_string(fields.size()));
        }
        try {
            s.dates.push_back(Date::parse(fields[0]));
        } catch (const InputError& e) {
            throw InputError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        s.values.push_back(parse_double(fields[1], path, line_no, "value"));
    }
    return s;
}

void write_labels_csv(const fs::path& path, const LabelSeries& s) {
    std::string out = "date,label,threshold_percentile\n";
    std::string m = num_str(s.threshold_percentile);
    for (std::size_t i = 0; i < s.dates.size(); ++i) {
        out += s.dates[i].iso();
        out += ',';
        out += std::to_string(s.labels[i]);
        out += ',';
        out += m;
        out += '\n';
    }
    write_file_atomic(path, out);

    njson meta;
    meta["threshold_percentile"] = s.threshold_percentile;
    meta["threshold_value"] = s.threshold_value;
    int n_pos = 0;
    for (int l : s.labels) n_pos += l;
    meta["n_positive"] = n_pos;
    meta["n"] = s.labels.size();
    fs::path meta_path = path;
    meta_path += ".meta.json";
    write_file_atomic(meta_path, meta.dump(2) + "\n");
}

LabelSeries read_labels_csv(const fs::path& path) {
    std::istringstream in(read_file(path));
    std::string line;
    if (!std::getline(in, line)) throw InputError(path.string() + ": empty file");
    auto header = split_csv_line(line);
    if (header.size() != 3 || header[0] != "date" || header[1] != "label" ||
        header[2] != "threshold_percentile") {
        throw InputError(path.string() +
                         ":1: expected header 'date,label,threshold_percentile'");
    }
    LabelSeries s;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != 3) {
            throw InputError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                             "3 fields, got " + std::to_string(fields.size()));
        }
        try {
            s.dates.push_back(Date::parse(fields[0]));
        } catch (const InputError& e) {
            throw InputError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (fields[1] != "0" && fields[1] != "1") {
            throw InputError(path.string() + ":" + std::to_string(line_no) + ": label '" +
                             fields[1] + "' is not 0/1");
        }
        s.labels.push_back(fields[1] == "1" ? 1 : 0);
        s.threshold_percentile = parse_double(fields[2], path, line_no, "threshold_percentile");
    }
    fs::path meta_path = path;
    meta_path += ".meta.json";
    if (fs::exists(meta_path)) {
        njson meta = parse_json(read_file(meta_path), meta_path.string());
        if (meta.contains("threshold_value")) {
            s.threshold_value = meta["threshold_value"].get<double>();
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void save_checkpoint(const fs::path& path, const ModelParams& params) {
    njson manifest = njson::array();
    std::string payload;
    params.for_each([&](const std::string& name, const Tensor& t) {
        njson entry;
        entry["name"] = name;
        entry["shape"] = t.shape;
        manifest.push_back(entry);
        for (double v : t.data) append_f64_le(payload, v);
    });
    std::string out;
    out += kCheckpointMagic;
    out += '\n';
    out += model_config_json(params.config);
    out += '\n';
    out += manifest.dump();
    out += '\n';
    out += kSeparator;
    out += '\n';
    out += payload;
    write_file_atomic(path, out);
}

ModelParams load_checkpoint(const fs::path& path) {
    std::string buf = read_file(path);
    std::size_t off = 0;
    if (take_line(buf, off, path) != kCheckpointMagic) {
        throw InputError(path.string() + ": checkpoint format/version mismatch");
    }
    ModelConfig cfg = model_config_from_json(take_line(buf, off, path));
    njson manifest = parse_json(take_line(buf, off, path), path.string());
    if (take_line(buf, off, path) != kSeparator) {
        throw InputError(path.string() + ": missing header separator");
    }
    ModelParams params = ModelParams::init(cfg, 0);
    std::size_t entry = 0;
    std::size_t expected_bytes = 0;
    params.for_each([&](const std::string&, const Tensor& t) {
        expected_bytes += t.data.size() * 8;
        (void)entry;
    });
    if (buf.size() - off != expected_bytes) {
        throw InputError(path.string() + ": payload of " + std::to_string(buf.size() - off) +
                         " bytes, expected " + std::to_string(expected_bytes));
    }
    params.for_each([&](const std::string& name, Tensor& t) {
        if (entry >= manifest.size()) {
            throw InputError(path.string() + ": tensor manifest shorter than config implies");
        }
        const njson& e = manifest[entry];
        if (e.at("name").get<std::string>() != name ||
            e.at("shape").get<std::vector<int>>() != t.shape) {
            throw InputError(path.string() + ": tensor '" + name +
                             "' does not match the checkpoint manifest");
        }
        for (double& v : t.data) {
            v = read_f64_le(buf, off);
            off += 8;
        }
        ++entry;
    });
    if (entry != manifest.size()) {
        throw InputError(path.string() + ": checkpoint holds extra tensors");
    }
    return params;
}

// ---------------------------------------------------------------------------
// Configs
// ---------------------------------------------------------------------------

std::string model_config_json(const ModelConfig& c) {
    njson j;
    j["input_h"] = c.input_h;
    j["input_w"] = c.input_w;
    j["input_d"] = c.input_d;
    j["blocks"] = c.blocks;
    j["total_filters_per_block"] = c.total_filters_per_block;
    j["attn_channels"] = c.attn_channels;
    j["num_heads"] = c.num_heads;
    j["d_k"] = c.d_k;
    j["kernel_size"] = c.kernel_size;
    j["pool_size"] = c.pool_size;
    j["dropout_rate"] = c.dropout_rate;
    j["num_classes"] = c.num_classes;
    j["use_highway"] = c.use_highway;
    return j.dump();
}

namespace {

ModelConfig model_config_from(const njson& j) {
    static const std::vector<std::string> known = {
        "input_h", "input_w", "input_d", "blocks", "total_filters_per_block",
        "attn_channels", "num_heads", "d_k", "kernel_size", "pool_size",
        "dropout_rate", "num_classes", "use_highway"};
    check_known_keys(j, known, "model config");
    ModelConfig c;
    c.input_h = j.value("input_h", c.input_h);
    c.input_w = j.value("input_w", c.input_w);
    c.input_d = j.value("input_d", c.input_d);
    c.blocks = j.value("blocks", c.blocks);
    c.total_filters_per_block = j.value("total_filters_per_block", c.total_filters_per_block);
    c.attn_channels = j.value("attn_channels", c.attn_channels);
    c.num_heads = j.value("num_heads", c.num_heads);
    c.d_k = j.value("d_k", c.d_k);
    c.kernel_size = j.value("kernel_size", c.kernel_size);
    c.pool_size = j.value("pool_size", c.pool_size);
    c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.use_highway = j.value("use_highway", c.use_highway);
    c.validate();
    return c;
}

TrainConfig train_config_from(const njson& j) {
    static const std::vector<std::string> known = {
        "epochs", "batch_size", "lr_max", "lr_min", "beta1", "beta2",
        "epsilon", "seed", "class_weighting"};
    check_known_keys(j, known, "train config");
    TrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr_max = j.value("lr_max", c.lr_max);
    c.lr_min = j.value("lr_min", c.lr_min);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.seed = j.value("seed", c.seed);
    std::string cw = j.value("class_weighting", std::string("inverse-frequency"));
    if (cw == "none") {
        c.class_weighting = ClassWeighting::None;
    } else if (cw == "inverse-frequency") {
        c.class_weighting = ClassWeighting::InverseFrequency;
    } else {
        throw ConfigError("class_weighting '" + cw + "' (want none | inverse-frequency)");
    }
    c.validate();
    return c;
}

}  // namespace

ModelConfig model_config_from_json(const std::string& text) {
    return model_config_from(parse_json(text, "model config"));
}

std::string train_config_json(const TrainConfig& c) {
    njson j;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["lr_max"] = c.lr_max;
    j["lr_min"] = c.lr_min;
    j["beta1"] = c.beta1;
    j["beta2"] = c.beta2;
    j["epsilon"] = c.epsilon;
    j["seed"] = c.seed;
    j["class_weighting"] =
        c.class_weighting == ClassWeighting::None ? "none" : "inverse-frequency";
    return j.dump();
}

TrainConfig train_config_from_json(const std::string& text) {
    return train_config_from(parse_json(text, "train config"));
}

FileConfig parse_config_file(const std::string& text) {
    njson j = parse_json(text, "config file");
    check_known_keys(j, {"model", "train"}, "config file");
    FileConfig fc;
    if (j.contains("model")) fc.model = model_config_from(j["model"]);
    if (j.contains("train")) fc.train = train_config_from(j["train"]);
    return fc;
}

// ---------------------------------------------------------------------------
// Reports and logs
// ---------------------------------------------------------------------------

std::string train_log_jsonl(const TrainResult& result) {
    std::string out;
    for (const EpochRecord& r : result.log) {
        njson j;
        j["epoch"] = r.epoch;
        j["lr"] = r.lr;
        j["loss"] = r.loss;
        j["train_accuracy"] = r.train_accuracy;
        out += j.dump();
        out += '\n';
    }
    njson fin;
    fin["final"] = true;
    fin["train_loss"] = result.final_train_loss;
    fin["train_accuracy"] = result.final_train_accuracy;
    out += fin.dump();
    out += '\n';
    return out;
}

namespace {

njson opt_json(const std::optional<double>& v) {
    return v ? njson(*v) : njson(nullptr);
}

std::string opt_csv(const std::optional<double>& v) { return v ? num_str(*v) : "NA"; }

njson report_body(const MetricsReport& r) {
    njson j;
    j["Loss"] = r.loss;
    j["Accuracy"] = opt_json(r.accuracy);
    j["Precision"] = opt_json(r.precision);
    j["Recall"] = opt_json(r.recall);
    j["AUC"] = opt_json(r.auc);
    j["F1_Score"] = opt_json(r.f1);
    njson cm;
    cm["tp"] = r.confusion.tp;
    cm["tn"] = r.confusion.tn;
    cm["fp"] = r.confusion.fp;
    cm["fn"] = r.confusion.fn;
    j["confusion"] = cm;
    j["threshold_percentile"] = r.threshold_percentile;
    return j;
}

}  // namespace

std::string metrics_report_json(const MetricsReport& r) { return report_body(r).dump(2); }

std::string ensemble_report_json(const EnsembleReport& r) {
    njson j;
    j["n_runs"] = r.n_runs;
    j["single_run"] = r.single_run;
    j["threshold_percentile"] = r.threshold_percentile;
    auto put = [&](const char* name, const EnsembleStat& st) {
        njson s;
        s["mean"] = opt_json(st.mean);
        s["sem"] = opt_json(st.sem);
        j[name] = s;
    };
    put("Loss", r.loss);
    put("Accuracy", r.accuracy);
    put("Precision", r.precision);
    put("Recall", r.recall);
    put("AUC", r.auc);
    put("F1_Score", r.f1);
    return j.dump(2);
}

std::string metrics_csv_header(const std::string& label_column) {
    return label_column + ",Loss,Accuracy,Precision,Recall,AUC,F1_Score";
}

std::string metrics_csv_row(const std::string& label, const MetricsReport& r) {
    return label + "," + num_str(r.loss) + "," + opt_csv(r.accuracy) + "," +
           opt_csv(r.precision) + "," + opt_csv(r.recall) + "," + opt_csv(r.auc) + "," +
           opt_csv(r.f1);
}

std::string ensemble_csv_header() {
    return "threshold_percentile,positives,Loss_mean,Loss_sem,Accuracy_mean,Accuracy_sem,"
           "Precision_mean,Precision_sem,Recall_mean,Recall_sem,AUC_mean,AUC_sem,"
           "F1_Score_mean,F1_Score_sem";
}

std::string ensemble_csv_row(const EnsembleReport& r, int positives) {
    auto pair = [&](const EnsembleStat& st) { return opt_csv(st.mean) + "," + opt_csv(st.sem); };
    return num_str(r.threshold_percentile) + "," + std::to_string(positives) + "," +
           pair(r.loss) + "," + pair(r.accuracy) + "," + pair(r.precision) + "," +
           pair(r.recall) + "," + pair(r.auc) + "," + pair(r.f1);
}

std::string confusion_text(const ConfusionMatrix& cm) {
    std::ostringstream os;
    os << "            predicted 1   predicted 0\n";
    os << "actual 1    " << cm.tp << "\t" << cm.fn << "\n";
    os << "actual 0    " << cm.fp << "\t" << cm.tn << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

std::string timestamp_now() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string digest_file(const fs::path& path) { return fnv1a_hex(read_file(path)); }

void write_manifest(const fs::path& path, const Manifest& m) {
    njson j;
    j["format"] = "saconv-manifest v1";
    j["command"] = m.command;
    j["status"] = m.status;
    j["config_hash"] = m.config_hash;
    j["master_seed"] = m.master_seed;
    njson inputs;
    for (const auto& [k, v] : m.input_digests) inputs[k] = v;
    j["inputs"] = inputs;
    j["artifacts"] = m.artifacts;
    j["created_at"] = m.created_at;
    j["completed_at"] = m.completed_at;
    write_file_atomic(path, j.dump(2) + "\n");
}

}  // namespace saconv::io
