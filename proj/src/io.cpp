#include "chunkrl/io.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace chunkrl::io {

using nlohmann::json;

namespace {

json state_to_json(const core::StateRepr& s) {
    if (s.tier == core::Tier::Discrete) return s.index;
    json arr = json::array();
    for (int i = 0; i < s.vec.size(); ++i) arr.push_back(s.vec(i));
    return arr;
}

core::StateRepr state_from_json(const json& j) {
    if (j.is_number_integer()) return core::StateRepr::discrete(j.get<int>());
    Vec v(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<int>(i)) = j[i].get<double>();
    return core::StateRepr::continuous(std::move(v));
}

}  // namespace

void save_dataset(const core::Dataset& data, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "save_dataset: cannot open " + path);

    json header;
    header["type"] = "header";
    header["env"] = data.meta.env_name;
    header["behavior"] = data.meta.behavior;
    header["seed"] = data.meta.seed;
    header["trajectories"] = data.trajectories.size();
    out << header.dump() << "\n";

    for (const auto& traj : data.trajectories) {
        json rec;
        json states = json::array();
        for (const auto& s : traj.states) states.push_back(state_to_json(s));
        rec["states"] = std::move(states);
        if (traj.tier == core::Tier::Discrete) {
            rec["actions"] = traj.action_ids;
        } else {
            json acts = json::array();
            for (int i = 0; i < traj.actions_cont.rows(); ++i) {
                json a = json::array();
                for (int j = 0; j < traj.actions_cont.cols(); ++j)
                    a.push_back(traj.actions_cont(i, j));
                acts.push_back(std::move(a));
            }
            rec["actions"] = std::move(acts);
        }
        rec["rewards"] = traj.rewards;
        rec["terminal"] = traj.terminal;
        out << rec.dump() << "\n";
    }
}

core::Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "load_dataset: cannot open " + path);

    core::Dataset data;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        if (first) {
            require(j.value("type", "") == "header", "load_dataset: missing header record");
            data.meta.env_name = j.value("env", "");
            data.meta.behavior = j.value("behavior", "");
            data.meta.seed = j.value("seed", 0ULL);
            first = false;
            continue;
        }
        core::Trajectory traj;
        const auto& states = j.at("states");
        for (const auto& s : states) traj.states.push_back(state_from_json(s));
        traj.tier = traj.states.front().tier;
        const auto& actions = j.at("actions");
        if (traj.tier == core::Tier::Discrete) {
            for (const auto& a : actions) traj.action_ids.push_back(a.get<int>());
        } else {
            const int T = static_cast<int>(actions.size());
            const int d = T > 0 ? static_cast<int>(actions[0].size()) : 0;
            traj.actions_cont.resize(T, d);
            for (int i = 0; i < T; ++i)
                for (int k = 0; k < d; ++k) traj.actions_cont(i, k) = actions[i][k].get<double>();
        }
        for (const auto& r : j.at("rewards")) traj.rewards.push_back(r.get<double>());
        traj.terminal = j.at("terminal").get<bool>();
        traj.check();
        data.trajectories.push_back(std::move(traj));
    }
    require(!first, "load_dataset: empty file");
    return data;
}

// ---------------------------------------------------------------------------
// CSV

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& columns)
    : columns_(columns), path_(path) {
    std::string head;
    for (std::size_t i = 0; i < columns.size(); ++i) {
        if (i) head += ',';
        head += columns[i];
    }
    buffer_ = head + "\n";
}

CsvWriter::~CsvWriter() {
    std::ofstream out(path_, std::ios::binary);
    out << buffer_;
}

void CsvWriter::row(const std::vector<std::string>& cells) {
    require(cells.size() == columns_.size(), "CsvWriter: column count mismatch");
    std::string line;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) line += ',';
        line += cells[i];
    }
    buffer_ += line + "\n";
}

MetricsCsv::MetricsCsv(const std::string& path, const core::ScaleSet& scales) {
    all_scales_ = scales.scales;
    for (int k : scales)
        if (k != scales.horizon()) partial_scales_.push_back(k);

    std::vector<std::string> cols = {"step", "phase", "loss_qh", "loss_vh"};
    for (int k : partial_scales_) cols.push_back("loss_qk_" + std::to_string(k));
    for (int k : partial_scales_) cols.push_back("loss_vk_" + std::to_string(k));
    cols.push_back("loss_bc");
    cols.push_back("success_rate");
    cols.push_back("mean_kstar");
    for (int k : all_scales_) cols.push_back("kstar_freq_" + std::to_string(k));
    csv_ = std::make_unique<CsvWriter>(path, cols);
}

void MetricsCsv::write(const trainer::MetricRow& row) {
    std::vector<std::string> cells;
    cells.push_back(std::to_string(row.step));
    cells.push_back(row.phase);
    cells.push_back(format_double(row.loss_qh));
    cells.push_back(format_double(row.loss_vh));
    for (int k : partial_scales_) {
        auto it = row.loss_qk.find(k);
        cells.push_back(it == row.loss_qk.end() ? "" : format_double(it->second));
    }
    for (int k : partial_scales_) {
        auto it = row.loss_vk.find(k);
        cells.push_back(it == row.loss_vk.end() ? "" : format_double(it->second));
    }
    cells.push_back(format_double(row.loss_bc));
    cells.push_back(row.success_rate ? format_double(*row.success_rate) : "");
    cells.push_back(row.mean_kstar ? format_double(*row.mean_kstar) : "");
    for (int k : all_scales_) {
        auto it = row.k_freq.find(k);
        cells.push_back(it == row.k_freq.end() ? "" : format_double(it->second));
    }
    csv_->row(cells);
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const std::vector<TensorEntry>& tensors, const std::string& path_prefix) {
    json manifest;
    manifest["version"] = 1;
    json list = json::array();

    std::ofstream blob(path_prefix + ".bin", std::ios::binary);
    require(blob.good(), "save_checkpoint: cannot open blob");
    long offset = 0;
    for (const auto& t : tensors) {
        json e;
        e["name"] = t.name;
        e["rows"] = t.rows;
        e["cols"] = t.cols;
        e["offset"] = offset;
        list.push_back(std::move(e));
        blob.write(reinterpret_cast<const char*>(t.data.data()),
                   static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        offset += static_cast<long>(t.data.size());
    }
    manifest["tensors"] = std::move(list);
    write_file(path_prefix + ".json", manifest.dump(2) + "\n");
}

std::vector<TensorEntry> load_checkpoint(const std::string& path_prefix) {
    json manifest = json::parse(read_file(path_prefix + ".json"));
    require(manifest.value("version", 0) == 1, "load_checkpoint: unsupported version");

    std::ifstream blob(path_prefix + ".bin", std::ios::binary);
    require(blob.good(), "load_checkpoint: cannot open blob");

    std::vector<TensorEntry> out;
    for (const auto& e : manifest.at("tensors")) {
        TensorEntry t;
        t.name = e.at("name").get<std::string>();
        t.rows = e.at("rows").get<long>();
        t.cols = e.at("cols").get<long>();
        t.data.resize(static_cast<std::size_t>(t.rows * t.cols));
        blob.seekg(e.at("offset").get<long>() * static_cast<long>(sizeof(double)));
        blob.read(reinterpret_cast<char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        require(blob.good(), "load_checkpoint: truncated blob");
        out.push_back(std::move(t));
    }
    return out;
}

namespace {

void push_net(std::vector<TensorEntry>& out, const std::string& prefix,
              const nn::DenseNet& net) {
    for (int l = 0; l < net.layer_count(); ++l) {
        TensorEntry w;
        w.name = prefix + ".W" + std::to_string(l);
        w.rows = net.W[l].rows();
        w.cols = net.W[l].cols();
        w.data.assign(net.W[l].data(), net.W[l].data() + net.W[l].size());
        out.push_back(std::move(w));
        TensorEntry b;
        b.name = prefix + ".b" + std::to_string(l);
        b.rows = net.b[l].size();
        b.cols = 1;
        b.data.assign(net.b[l].data(), net.b[l].data() + net.b[l].size());
        out.push_back(std::move(b));
    }
}

void pull_net(const std::map<std::string, const TensorEntry*>& index, const std::string& prefix,
              nn::DenseNet& net) {
    for (int l = 0; l < net.layer_count(); ++l) {
        const auto* w = index.at(prefix + ".W" + std::to_string(l));
        require(w->rows == net.W[l].rows() && w->cols == net.W[l].cols(),
                "restore: tensor shape mismatch at " + prefix);
        std::copy(w->data.begin(), w->data.end(), net.W[l].data());
        const auto* b = index.at(prefix + ".b" + std::to_string(l));
        std::copy(b->data.begin(), b->data.end(), net.b[l].data());
    }
}

void push_head(std::vector<TensorEntry>& out, const std::string& prefix,
               const critics::Head& head) {
    push_net(out, prefix, head.net());
    push_net(out, prefix + ".ema", head.shadow());
}

void pull_head(const std::map<std::string, const TensorEntry*>& index, const std::string& prefix,
               critics::Head& head) {
    pull_net(index, prefix, head.net());
    pull_net(index, prefix + ".ema", head.shadow());
}

}  // namespace

std::vector<TensorEntry> snapshot_artifacts(const trainer::Artifacts& art) {
    std::vector<TensorEntry> out;
    const auto& b = art.bundle;
    for (std::size_t i = 0; i < b.qh->members().size(); ++i)
        push_head(out, "qh." + std::to_string(i), b.qh->members()[i]);
    push_head(out, "vh", *b.vh);
    for (const auto& [k, ens] : b.qk)
        for (std::size_t i = 0; i < ens->members().size(); ++i)
            push_head(out, "qk" + std::to_string(k) + "." + std::to_string(i),
                      ens->members()[i]);
    for (const auto& [k, head] : b.vk) push_head(out, "vk" + std::to_string(k), *head);
    if (art.flow) push_net(out, "flow", art.flow->net());
    return out;
}

void restore_artifacts(trainer::Artifacts& art, const std::vector<TensorEntry>& tensors) {
    std::map<std::string, const TensorEntry*> index;
    for (const auto& t : tensors) index[t.name] = &t;
    auto& b = art.bundle;
    for (std::size_t i = 0; i < b.qh->members().size(); ++i)
        pull_head(index, "qh." + std::to_string(i), b.qh->members()[i]);
    pull_head(index, "vh", *b.vh);
    for (auto& [k, ens] : b.qk)
        for (std::size_t i = 0; i < ens->members().size(); ++i)
            pull_head(index, "qk" + std::to_string(k) + "." + std::to_string(i),
                      ens->members()[i]);
    for (auto& [k, head] : b.vk) pull_head(index, "vk" + std::to_string(k), *head);
    if (art.flow) pull_net(index, "flow", art.flow->net());
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "read_file: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "write_file: cannot open " + path);
    out << content;
}

}  // namespace chunkrl::io
