#include "sage/store.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <fstream>

#include "sage/error.hpp"
#include "sage/serialization.hpp"

namespace sage {

namespace {

constexpr char kDoseMagic[8] = {'S', 'A', 'G', 'E', 'D', 'O', 'S', '1'};

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
bool get(std::istream& is, T& v) {
  return static_cast<bool>(is.read(reinterpret_cast<char*>(&v), sizeof v));
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

void write_dose(const std::filesystem::path& path, const DoseDistribution& dose) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorKind::IoError, "cannot write " + path.string());
    os.write(kDoseMagic, sizeof kDoseMagic);
    for (int d : dose.grid.dims()) put(os, static_cast<std::int32_t>(d));
    for (double v : {dose.grid.spacing().x, dose.grid.spacing().y, dose.grid.spacing().z, dose.grid.origin().x,
                     dose.grid.origin().y, dose.grid.origin().z}) {
      put(os, v);
    }
    os.write(reinterpret_cast<const char*>(dose.dose.data()), static_cast<std::streamsize>(dose.dose.size() * sizeof(double)));
    if (!os) throw Error(ErrorKind::IoError, "failed writing " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

DoseDistribution read_dose(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kDoseMagic, sizeof magic) != 0) {
    throw Error(ErrorKind::IoError, path.string() + " is not a dose file");
  }
  std::int32_t dims[3];
  double g[6];
  for (auto& d : dims) {
    if (!get(is, d)) throw Error(ErrorKind::IoError, "truncated dose file " + path.string());
  }
  for (auto& v : g) {
    if (!get(is, v)) throw Error(ErrorKind::IoError, "truncated dose file " + path.string());
  }
  DoseDistribution dose;
  dose.grid = VoxelGrid({dims[0], dims[1], dims[2]}, {g[0], g[1], g[2]}, {g[3], g[4], g[5]});
  dose.dose.resize(dose.grid.size());
  if (!is.read(reinterpret_cast<char*>(dose.dose.data()), static_cast<std::streamsize>(dose.dose.size() * sizeof(double)))) {
    throw Error(ErrorKind::IoError, "truncated dose file " + path.string());
  }
  return dose;
}

SessionStore::SessionStore(std::filesystem::path root) : root_(std::move(root)) {
  std::error_code ec;
  std::filesystem::create_directories(root_, ec);
  if (ec || !std::filesystem::is_directory(root_)) throw Error(ErrorKind::IoError, "cannot open store " + root_.string());
}

void SessionStore::check_id(const std::string& id) const {
  const bool ok = !id.empty() && id[0] != '.' && std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
  });
  if (!ok) throw Error(ErrorKind::NotFound, "no session '" + id + "'");
}

std::filesystem::path SessionStore::dir(const std::string& id) const {
  check_id(id);
  return root_ / id;
}

std::filesystem::path SessionStore::trace_path(const std::string& id) const { return dir(id) / "trace.jsonl"; }

bool SessionStore::exists(const std::string& id) const {
  try {
    return std::filesystem::is_regular_file(dir(id) / "session.json");
  } catch (const Error&) {
    return false;
  }
}

std::vector<std::string> SessionStore::ids() const {
  struct Entry {
    std::string id;
    std::string created;
    std::int64_t seq;
  };
  std::vector<Entry> entries;
  std::error_code ec;
  std::filesystem::directory_iterator it(root_, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot read store " + root_.string());
  for (const auto& e : it) {
    if (!e.is_directory()) continue;
    const auto id = e.path().filename().string();
    if (id.empty() || id[0] == '.' || !exists(id)) continue;
    Entry en{id, "", 0};
    const auto meta = e.path() / "meta.json";
    if (std::filesystem::exists(meta)) {
      const auto j = read_json_file(meta);
      en.created = j.value("created_at", std::string{});
      en.seq = j.value("sequence", std::int64_t{0});
    }
    entries.push_back(std::move(en));
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.created != b.created) return a.created > b.created;
    if (a.seq != b.seq) return a.seq > b.seq;
    return a.id > b.id;
  });
  std::vector<std::string> out;
  for (auto& e : entries) out.push_back(std::move(e.id));
  return out;
}

PlanningSession SessionStore::load(const std::string& id) const {
  if (!exists(id)) throw Error(ErrorKind::NotFound, "no session '" + id + "'");
  return session_from_json(read_json_file(dir(id) / "session.json"));
}

Case SessionStore::load_case(const std::string& id) const {
  if (!exists(id)) throw Error(ErrorKind::NotFound, "no session '" + id + "'");
  return read_case(dir(id) / "case.json");
}

std::optional<DoseDistribution> SessionStore::load_dose(const std::string& id, int round) const {
  const auto p = dir(id) / ("dose_r" + std::to_string(round) + ".bin");
  if (!std::filesystem::exists(p)) return std::nullopt;
  return read_dose(p);
}

nlohmann::json SessionStore::decisions(const std::string& id) const {
  const auto p = dir(id) / "decisions.json";
  if (!std::filesystem::exists(p)) return nlohmann::json::array();
  return read_json_file(p);
}

void SessionStore::create(const PlanningSession& session, const Case& c) {
  const auto d = dir(session.session_id);
  if (std::filesystem::exists(d / "session.json")) {
    throw Error(ErrorKind::Conflict, "session '" + session.session_id + "' already exists");
  }
  std::filesystem::create_directories(d);
  std::int64_t seq = 0;
  for (const auto& e : std::filesystem::directory_iterator(root_)) seq += e.is_directory();
  write_json_file(d / "meta.json", {{"created_at", utc_now()}, {"sequence", seq}});
  write_case(d / "case.json", c);
  save(session);
}

void SessionStore::save(const PlanningSession& session) {
  write_json_file(dir(session.session_id) / "session.json", session_to_json(session), -1);
}

void SessionStore::save_dose(const std::string& id, int round, const DoseDistribution& dose) {
  write_dose(dir(id) / ("dose_r" + std::to_string(round) + ".bin"), dose);
}

void SessionStore::append_trace(const std::string& id, const std::string& line) {
  std::lock_guard lock(trace_mutex_);
  const auto p = trace_path(id);
  std::filesystem::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary | std::ios::app);
  if (!os) throw Error(ErrorKind::IoError, "cannot append to " + p.string());
  os << line << '\n';
}

void SessionStore::append_decision(const std::string& id, const nlohmann::json& decision) {
  auto list = decisions(id);
  list.push_back(decision);
  write_json_file(dir(id) / "decisions.json", list);
}

namespace {

void save_selected_dose(SessionStore& store, const PlanningSession& s, const DoseInfluence& influence) {
  if (const auto* it = s.selected_iteration()) store.save_dose(s.session_id, s.round(), compose_dose(influence, it->weights));
}

}  // namespace

PlanningSession plan_into_store(SessionStore& store, const Case& c, const DoseInfluence& influence, PolicyAdapter& policy,
                                const GoalSet& goals, SessionConfig config) {
  if (config.session_id.empty()) config.session_id = c.id + "-s" + std::to_string(config.seed);
  if (store.exists(config.session_id)) throw Error(ErrorKind::Conflict, "session '" + config.session_id + "' already exists");
  std::filesystem::create_directories(store.dir(config.session_id));
  std::filesystem::remove(store.trace_path(config.session_id));
  const auto id = config.session_id;
  auto outer = config.trace;
  config.trace = [&store, id, outer](const std::string& line) {
    store.append_trace(id, line);
    if (outer) outer(line);
  };
  auto s = run_session(c, influence, policy, goals, config);
  save_selected_dose(store, s, influence);
  store.create(s, c);
  return s;
}

PlanningSession refine_in_store(SessionStore& store, PlanningSession session, const Case& c, const DoseInfluence& influence,
                                PolicyAdapter& policy, const GoalSet& goals, const std::string& refinement_text,
                                SessionConfig config) {
  const auto id = session.session_id;
  auto outer = config.trace;
  config.trace = [&store, id, outer](const std::string& line) {
    store.append_trace(id, line);
    if (outer) outer(line);
  };
  refine_session(session, c, influence, policy, goals, refinement_text, config);
  save_selected_dose(store, session, influence);
  store.save(session);
  return session;
}

}  // namespace sage
