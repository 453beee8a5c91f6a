#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "sage/review_service.hpp"

namespace sage {

/// HTTP front end of a ReviewService.
///
///   GET  /sessions                 summaries, newest first
///   GET  /sessions/{id}            full detail
///   POST /sessions/{id}/decision   {"verdict": "Accept"|"Refine", "refinement_text": "..."}
///                                  reviewer id in the X-Reviewer-Id header
///   GET  /config                   default refinement text and goals
///
/// Errors are {"error": <kind>, "message": ...} with 404 not-found,
/// 409 conflict, 400 invalid-argument and 500 for anything else.
class ReviewServer {
 public:
  explicit ReviewServer(ReviewService& service, std::optional<std::filesystem::path> static_dir = std::nullopt);
  ~ReviewServer();
  ReviewServer(const ReviewServer&) = delete;
  ReviewServer& operator=(const ReviewServer&) = delete;

  /// Listens on a background thread and returns the bound port (port 0 picks
  /// a free one). Throws io-error when binding fails.
  int start(const std::string& host, int port);
  /// Blocks serving until stop() is called from elsewhere.
  void run(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace sage
