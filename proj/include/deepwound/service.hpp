#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "deepwound/ensemble.hpp"

namespace httplib {
class Server;
}

struct sqlite3;

namespace deepwound::service {

inline constexpr std::size_t kMaxImageBytes = 16u << 20;

struct DailyEntry {
  std::string patient_id;
  std::string date;  // YYYY-MM-DD
  double weight = 0.0;
  int pain = 0;
  bool medication_taken = false;
  bool dressing_changed = false;
  std::optional<std::string> image_ref;
  bool revised = false;
  std::string updated_at;
  std::optional<nlohmann::json> assessment;  // filled in on read when image_ref has one
};

nlohmann::json to_json(const DailyEntry& e);

/// True for a real calendar day written as YYYY-MM-DD.
bool valid_date(const std::string& s);
std::string today_utc();
/// `date` shifted by `days` (may be negative); `date` must be valid.
std::string add_days(const std::string& date, int days);

/// Single-file SQLite store.
///
///   patients(id TEXT PK, created_at TEXT)
///   images(id TEXT PK, received_at TEXT, width INT, height INT, png BLOB, assessment TEXT)
///   entries(patient_id, date, weight, pain, medication_taken, dressing_changed,
///           image_ref, revised, updated_at; PK(patient_id, date))
///
/// Images hold only re-encoded pixels; nothing from the upload's container
/// (EXIF, file name) is kept.
class Store {
 public:
  explicit Store(const std::string& path);  // ":memory:" works
  ~Store();
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  std::string create_patient();
  bool patient_exists(const std::string& id) const;

  std::string store_image(const std::vector<std::uint8_t>& png, int width, int height,
                          const std::string& received_at, const nlohmann::json& assessment);
  bool image_exists(const std::string& id) const;
  std::optional<std::vector<std::uint8_t>> image_png(const std::string& id) const;
  std::optional<nlohmann::json> image_assessment(const std::string& id) const;

  /// Last write wins; the returned entry has `revised` set when a previous
  /// entry for the same day was replaced.
  DailyEntry upsert_entry(DailyEntry e);
  /// Entries with from <= date <= to, ascending by date.
  std::vector<DailyEntry> entries(const std::string& patient_id, const std::string& from,
                                  const std::string& to) const;

 private:
  sqlite3* db_ = nullptr;
  mutable std::mutex mu_;
};

/// Random 128-bit hex token.
std::string random_token();

class Service {
 public:
  explicit Service(Store& store, std::shared_ptr<const ensemble::EnsembleBundle> bundle = nullptr);

  void set_bundle(std::shared_ptr<const ensemble::EnsembleBundle> bundle);
  std::shared_ptr<const ensemble::EnsembleBundle> bundle() const;

  /// POST /assess, POST /patients, POST /patients/{id}/entries,
  /// GET /patients/{id}/report, GET /health.
  void register_routes(httplib::Server& server);

  nlohmann::json report(const std::string& patient_id, int days, const std::string& end) const;

 private:
  Store& store_;
  mutable std::mutex bundle_mu_;
  std::shared_ptr<const ensemble::EnsembleBundle> bundle_;
};

}  // namespace deepwound::service
