#pragma once

#include <memory>
#include <string>

#include "causalread/experiment.hpp"

namespace causalread {

/// HTTP+JSON front of an ExperimentService:
///   POST /sessions                  {participant_id, counterbalance_index, seed}
///   GET  /sessions/{id}/next
///   POST /sessions/{id}/advance     {chunk_index, shown_at, advanced_at}
///   POST /sessions/{id}/rating      {trial_index, question, value}
///   POST /sessions/{id}/familiarity {trial_index, unfamiliar}
///   GET  /export/trials.csv, /export/ratings.csv
/// Errors come back as {"error": name, "message": text} with a 4xx status.
class ExperimentServer {
 public:
  explicit ExperimentServer(ExperimentService& service);
  ~ExperimentServer();
  ExperimentServer(const ExperimentServer&) = delete;
  ExperimentServer& operator=(const ExperimentServer&) = delete;

  /// Binds the listening socket; port 0 picks a free port. Returns the bound
  /// port or -1 when the address is unavailable.
  int bind(const std::string& host, int port);
  /// Serves until stop() is called. Requires a successful bind().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace causalread
