#include "deepwound/service.hpp"

#include <chrono>
#include <cstdio>
#include <iostream>
#include <random>
#include <regex>

#include <httplib.h>
#include <sqlite3.h>

#include "deepwound/error.hpp"
#include "deepwound/imaging.hpp"

namespace deepwound::service {

namespace {

using nlohmann::json;
namespace chr = std::chrono;

std::optional<chr::year_month_day> parse_date(const std::string& s) {
  static const std::regex re(R"((\d{4})-(\d{2})-(\d{2}))");
  std::smatch m;
  if (!std::regex_match(s, m, re)) return std::nullopt;
  const chr::year_month_day d{chr::year(std::stoi(m[1])), chr::month(static_cast<unsigned>(std::stoi(m[2]))),
                              chr::day(static_cast<unsigned>(std::stoi(m[3])))};
  if (!d.ok()) return std::nullopt;
  return d;
}

std::string format_date(const chr::year_month_day& d) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()), static_cast<unsigned>(d.month()),
                static_cast<unsigned>(d.day()));
  return buf;
}

class Statement {
 public:
  Statement(sqlite3* db, const char* sql) : db_(db) {
    if (sqlite3_prepare_v2(db, sql, -1, &st_, nullptr) != SQLITE_OK) fail("prepare");
  }
  ~Statement() { sqlite3_finalize(st_); }
  Statement(const Statement&) = delete;
  Statement& operator=(const Statement&) = delete;

  Statement& bind(int i, const std::string& v) {
    sqlite3_bind_text(st_, i, v.data(), static_cast<int>(v.size()), SQLITE_TRANSIENT);
    return *this;
  }
  Statement& bind(int i, double v) {
    sqlite3_bind_double(st_, i, v);
    return *this;
  }
  Statement& bind(int i, int v) {
    sqlite3_bind_int(st_, i, v);
    return *this;
  }
  Statement& bind_blob(int i, const std::vector<std::uint8_t>& v) {
    sqlite3_bind_blob(st_, i, v.data(), static_cast<int>(v.size()), SQLITE_TRANSIENT);
    return *this;
  }
  Statement& bind_null(int i) {
    sqlite3_bind_null(st_, i);
    return *this;
  }

  bool step() {
    const int rc = sqlite3_step(st_);
    if (rc == SQLITE_ROW) return true;
    if (rc != SQLITE_DONE) fail("step");
    return false;
  }

  std::string text(int col) const {
    const auto* p = sqlite3_column_text(st_, col);
    return p ? reinterpret_cast<const char*>(p) : "";
  }
  bool is_null(int col) const { return sqlite3_column_type(st_, col) == SQLITE_NULL; }
  double real(int col) const { return sqlite3_column_double(st_, col); }
  int integer(int col) const { return sqlite3_column_int(st_, col); }
  std::vector<std::uint8_t> blob(int col) const {
    const auto* p = static_cast<const std::uint8_t*>(sqlite3_column_blob(st_, col));
    return std::vector<std::uint8_t>(p, p + sqlite3_column_bytes(st_, col));
  }

 private:
  [[noreturn]] void fail(const char* what) {
    throw Error(ErrorCode::kIoError, std::string("sqlite ") + what + ": " + sqlite3_errmsg(db_));
  }
  sqlite3* db_;
  sqlite3_stmt* st_ = nullptr;
};

void exec(sqlite3* db, const char* sql) {
  char* msg = nullptr;
  if (sqlite3_exec(db, sql, nullptr, nullptr, &msg) != SQLITE_OK) {
    std::string m = msg ? msg : "unknown";
    sqlite3_free(msg);
    throw Error(ErrorCode::kIoError, "sqlite: " + m);
  }
}

constexpr const char* kSchema = R"sql(
PRAGMA foreign_keys = ON;
CREATE TABLE IF NOT EXISTS patients (
  id TEXT PRIMARY KEY,
  created_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS images (
  id TEXT PRIMARY KEY,
  received_at TEXT NOT NULL,
  width INTEGER NOT NULL,
  height INTEGER NOT NULL,
  png BLOB NOT NULL,
  assessment TEXT
);
CREATE TABLE IF NOT EXISTS entries (
  patient_id TEXT NOT NULL REFERENCES patients(id),
  date TEXT NOT NULL,
  weight REAL NOT NULL,
  pain INTEGER NOT NULL,
  medication_taken INTEGER NOT NULL,
  dressing_changed INTEGER NOT NULL,
  image_ref TEXT REFERENCES images(id),
  revised INTEGER NOT NULL DEFAULT 0,
  updated_at TEXT NOT NULL,
  PRIMARY KEY (patient_id, date)
);
)sql";

}  // namespace

bool valid_date(const std::string& s) { return parse_date(s).has_value(); }

std::string today_utc() {
  return format_date(chr::year_month_day(chr::floor<chr::days>(chr::system_clock::now())));
}

std::string add_days(const std::string& date, int days) {
  const auto d = parse_date(date);
  if (!d) throw Error(ErrorCode::kInvalidConfig, "invalid date " + date);
  return format_date(chr::year_month_day(chr::sys_days(*d) + chr::days(days)));
}

std::string random_token() {
  static thread_local std::mt19937_64 rng([] {
    std::random_device rd;
    std::seed_seq seq{rd(), rd(), rd(), rd()};
    return std::mt19937_64(seq);
  }());
  char buf[33];
  std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(rng()),
                static_cast<unsigned long long>(rng()));
  return buf;
}

json to_json(const DailyEntry& e) {
  return {{"patient_id", e.patient_id},
          {"date", e.date},
          {"weight", e.weight},
          {"pain", e.pain},
          {"medication_taken", e.medication_taken},
          {"dressing_changed", e.dressing_changed},
          {"image_ref", e.image_ref ? json(*e.image_ref) : json()},
          {"revised", e.revised},
          {"updated_at", e.updated_at},
          {"assessment", e.assessment ? *e.assessment : json()}};
}

Store::Store(const std::string& path) {
  if (sqlite3_open_v2(path.c_str(), &db_, SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX,
                      nullptr) != SQLITE_OK) {
    const std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
    sqlite3_close(db_);
    throw Error(ErrorCode::kIoError, "cannot open store " + path + ": " + msg);
  }
  exec(db_, kSchema);
}

Store::~Store() { sqlite3_close(db_); }

std::string Store::create_patient() {
  std::lock_guard lock(mu_);
  const auto id = random_token();
  Statement(db_, "INSERT INTO patients(id, created_at) VALUES (?, ?)")
      .bind(1, id)
      .bind(2, ensemble::utc_timestamp_now())
      .step();
  return id;
}

bool Store::patient_exists(const std::string& id) const {
  std::lock_guard lock(mu_);
  Statement st(db_, "SELECT 1 FROM patients WHERE id = ?");
  st.bind(1, id);
  return st.step();
}

std::string Store::store_image(const std::vector<std::uint8_t>& png, int width, int height,
                               const std::string& received_at, const json& assessment) {
  std::lock_guard lock(mu_);
  const auto id = random_token();
  Statement(db_, "INSERT INTO images(id, received_at, width, height, png, assessment) VALUES (?, ?, ?, ?, ?, ?)")
      .bind(1, id)
      .bind(2, received_at)
      .bind(3, width)
      .bind(4, height)
      .bind_blob(5, png)
      .bind(6, assessment.dump())
      .step();
  return id;
}

bool Store::image_exists(const std::string& id) const {
  std::lock_guard lock(mu_);
  Statement st(db_, "SELECT 1 FROM images WHERE id = ?");
  st.bind(1, id);
  return st.step();
}

std::optional<std::vector<std::uint8_t>> Store::image_png(const std::string& id) const {
  std::lock_guard lock(mu_);
  Statement st(db_, "SELECT png FROM images WHERE id = ?");
  st.bind(1, id);
  if (!st.step()) return std::nullopt;
  return st.blob(0);
}

std::optional<json> Store::image_assessment(const std::string& id) const {
  std::lock_guard lock(mu_);
  Statement st(db_, "SELECT assessment FROM images WHERE id = ?");
  st.bind(1, id);
  if (!st.step() || st.is_null(0)) return std::nullopt;
  return json::parse(st.text(0));
}

DailyEntry Store::upsert_entry(DailyEntry e) {
  std::lock_guard lock(mu_);
  exec(db_, "BEGIN IMMEDIATE");
  try {
    {
      Statement st(db_, "SELECT 1 FROM entries WHERE patient_id = ? AND date = ?");
      st.bind(1, e.patient_id).bind(2, e.date);
      e.revised = st.step();
    }
    e.updated_at = ensemble::utc_timestamp_now();
    Statement st(db_,
                 "INSERT OR REPLACE INTO entries(patient_id, date, weight, pain, medication_taken, dressing_changed, "
                 "image_ref, revised, updated_at) VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)");
    st.bind(1, e.patient_id)
        .bind(2, e.date)
        .bind(3, e.weight)
        .bind(4, e.pain)
        .bind(5, e.medication_taken ? 1 : 0)
        .bind(6, e.dressing_changed ? 1 : 0);
    if (e.image_ref) {
      st.bind(7, *e.image_ref);
    } else {
      st.bind_null(7);
    }
    st.bind(8, e.revised ? 1 : 0).bind(9, e.updated_at);
    st.step();
    exec(db_, "COMMIT");
  } catch (...) {
    sqlite3_exec(db_, "ROLLBACK", nullptr, nullptr, nullptr);
    throw;
  }
  return e;
}

std::vector<DailyEntry> Store::entries(const std::string& patient_id, const std::string& from,
                                       const std::string& to) const {
  std::lock_guard lock(mu_);
  Statement st(db_,
               "SELECT e.date, e.weight, e.pain, e.medication_taken, e.dressing_changed, e.image_ref, e.revised, "
               "e.updated_at, i.assessment FROM entries e LEFT JOIN images i ON i.id = e.image_ref "
               "WHERE e.patient_id = ? AND e.date >= ? AND e.date <= ? ORDER BY e.date");
  st.bind(1, patient_id).bind(2, from).bind(3, to);
  std::vector<DailyEntry> out;
  while (st.step()) {
    DailyEntry e;
    e.patient_id = patient_id;
    e.date = st.text(0);
    e.weight = st.real(1);
    e.pain = st.integer(2);
    e.medication_taken = st.integer(3) != 0;
    e.dressing_changed = st.integer(4) != 0;
    if (!st.is_null(5)) e.image_ref = st.text(5);
    e.revised = st.integer(6) != 0;
    e.updated_at = st.text(7);
    if (!st.is_null(8)) e.assessment = json::parse(st.text(8));
    out.push_back(std::move(e));
  }
  return out;
}

Service::Service(Store& store, std::shared_ptr<const ensemble::EnsembleBundle> bundle)
    : store_(store), bundle_(std::move(bundle)) {}

void Service::set_bundle(std::shared_ptr<const ensemble::EnsembleBundle> bundle) {
  std::lock_guard lock(bundle_mu_);
  bundle_ = std::move(bundle);
}

std::shared_ptr<const ensemble::EnsembleBundle> Service::bundle() const {
  std::lock_guard lock(bundle_mu_);
  return bundle_;
}

json Service::report(const std::string& patient_id, int days, const std::string& end) const {
  const std::string start = add_days(end, -(days - 1));
  const auto entries = store_.entries(patient_id, start, end);

  json entry_list = json::array();
  json dates = json::array(), weight = json::array(), pain = json::array();
  json labels = json::object();
  for (const auto& name : kLabelNames) labels[std::string(name)] = json::array();
  for (const auto& e : entries) {
    entry_list.push_back(to_json(e));
    dates.push_back(e.date);
    weight.push_back(e.weight);
    pain.push_back(e.pain);
    for (std::size_t k = 0; k < kNumLabels; ++k) {
      json v;  // null when the day has no assessed image
      if (e.assessment) v = e.assessment->at("labels").at(k).at("decision");
      labels[std::string(kLabelNames[k])].push_back(v);
    }
  }
  return {{"patient_id", patient_id},
          {"start", start},
          {"end", end},
          {"days", days},
          {"entries", entry_list},
          {"series", {{"dates", dates}, {"weight", weight}, {"pain", pain}, {"labels", labels}}}};
}

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& error, const std::string& message) {
  send_json(res, status, {{"error", error}, {"message", message}});
}

}  // namespace

void Service::register_routes(httplib::Server& server) {
  // Headroom above the per-image limit so oversize parts get a proper 413
  // from the handler instead of a dropped connection.
  server.set_payload_max_length(4 * kMaxImageBytes);
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  server.Options(".*", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string msg = "unknown error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      msg = e.what();
    } catch (...) {
    }
    send_error(res, 500, "internal", msg);
  });

  server.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
    const auto b = bundle();
    if (!b) {
      send_json(res, 503, {{"status", "no-model"}, {"model_version", nullptr}});
      return;
    }
    send_json(res, 200, {{"status", "ok"}, {"model_version", b->version()}});
  });

  server.Post("/assess", [this](const httplib::Request& req, httplib::Response& res) {
    if (!req.is_multipart_form_data()) {
      send_error(res, 400, "bad-request", "expected a multipart/form-data body with one image part");
      return;
    }
    if (req.files.size() != 1) {
      send_error(res, 400, "bad-request",
                 "expected exactly one image part, got " + std::to_string(req.files.size()));
      return;
    }
    const auto& part = req.files.begin()->second;
    if (part.content.size() > kMaxImageBytes) {
      send_error(res, 413, "too-large", "image part exceeds 16 MiB");
      return;
    }
    const auto b = bundle();
    if (!b) {
      send_error(res, 503, "no-model", "no ensemble bundle is loaded");
      return;
    }
    imaging::RawImage img;
    try {
      img = imaging::decode_image(std::span(reinterpret_cast<const std::uint8_t*>(part.content.data()),
                                            part.content.size()));
    } catch (const Error& e) {
      send_error(res, 400, std::string(to_string(e.code())), e.what());
      return;
    }
    const auto received_at = ensemble::utc_timestamp_now();
    const auto assessment = ensemble::assess(*b, img);
    json body = ensemble::to_json(assessment);
    // Only decoded pixels are kept, re-encoded; container metadata is gone.
    body["image_id"] = store_.store_image(imaging::encode_png(img), img.width, img.height, received_at, body);
    body["received_at"] = received_at;
    send_json(res, 200, body);
  });

  server.Post("/patients", [this](const httplib::Request&, httplib::Response& res) {
    send_json(res, 201, {{"patient_id", store_.create_patient()}});
  });

  server.Post(R"(/patients/([0-9A-Za-z]+)/entries)", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    if (!store_.patient_exists(id)) {
      send_error(res, 404, "not-found", "unknown patient");
      return;
    }
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception& e) {
      send_error(res, 400, "bad-request", std::string("body is not JSON: ") + e.what());
      return;
    }
    if (!body.is_object()) {
      send_error(res, 400, "bad-request", "body must be a JSON object");
      return;
    }

    json fields = json::object();
    DailyEntry e;
    e.patient_id = id;
    const auto date = body.find("date");
    if (date == body.end() || !date->is_string() || !valid_date(date->get<std::string>())) {
      fields["date"] = "must be a calendar date YYYY-MM-DD";
    } else {
      e.date = date->get<std::string>();
    }
    const auto weight = body.find("weight");
    if (weight == body.end() || !weight->is_number() || !(weight->get<double>() > 0) ||
        !std::isfinite(weight->get<double>())) {
      fields["weight"] = "must be a positive number of kilograms";
    } else {
      e.weight = weight->get<double>();
    }
    const auto pain = body.find("pain");
    if (pain == body.end() || !pain->is_number_integer() || pain->get<long long>() < 0 ||
        pain->get<long long>() > 10) {
      fields["pain"] = "must be an integer from 0 to 10";
    } else {
      e.pain = pain->get<int>();
    }
    for (const char* flag : {"medication_taken", "dressing_changed"}) {
      const auto f = body.find(flag);
      if (f == body.end()) continue;
      if (!f->is_boolean()) {
        fields[flag] = "must be true or false";
      } else {
        (std::string(flag) == "medication_taken" ? e.medication_taken : e.dressing_changed) = f->get<bool>();
      }
    }
    const auto ref = body.find("image_ref");
    if (ref != body.end() && !ref->is_null()) {
      if (!ref->is_string() || !store_.image_exists(ref->get<std::string>())) {
        fields["image_ref"] = "must reference an image returned by /assess";
      } else {
        e.image_ref = ref->get<std::string>();
      }
    }
    if (!fields.empty()) {
      send_json(res, 422, {{"error", "validation"}, {"message", "entry rejected"}, {"fields", fields}});
      return;
    }
    auto stored = store_.upsert_entry(std::move(e));
    if (stored.image_ref) stored.assessment = store_.image_assessment(*stored.image_ref);
    send_json(res, stored.revised ? 200 : 201, to_json(stored));
  });

  server.Get(R"(/patients/([0-9A-Za-z]+)/report)", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    if (!store_.patient_exists(id)) {
      send_error(res, 404, "not-found", "unknown patient");
      return;
    }
    int days = 30;
    if (req.has_param("days")) {
      const auto v = req.get_param_value("days");
      static const std::regex digits(R"(\d{1,4})");
      if (!std::regex_match(v, digits) || std::stoi(v) < 1) {
        send_error(res, 400, "bad-request", "days must be an integer >= 1");
        return;
      }
      days = std::stoi(v);
    }
    std::string end = today_utc();
    if (req.has_param("end")) {
      end = req.get_param_value("end");
      if (!valid_date(end)) {
        send_error(res, 400, "bad-request", "end must be a calendar date YYYY-MM-DD");
        return;
      }
    }
    send_json(res, 200, report(id, days, end));
  });
}

}  // namespace deepwound::service
