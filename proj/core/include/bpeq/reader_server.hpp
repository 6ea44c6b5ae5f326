#pragma once

#include <memory>
#include <string>

#include "bpeq/reader_study.hpp"

namespace bpeq {

// HTTP front of a ReaderStudy:
//   GET  /api/cases                                    case list with slice counts
//   GET  /api/case/{id}/slice/{z}?layer=original|middle|right   PNG
//   POST /api/score                                    ReaderRecord JSON
//   GET  /api/export   (header X-Study-Token)          unblinded CSV
// Errors are JSON {"error": ..., "rule": ...}; nothing but the export
// names a segmentation method.
class ReaderServer {
 public:
  explicit ReaderServer(ReaderStudy& study);
  ~ReaderServer();
  ReaderServer(const ReaderServer&) = delete;
  ReaderServer& operator=(const ReaderServer&) = delete;

  // Binds the listening socket; port 0 picks a free port. Returns the bound
  // port. Throws IoError when binding fails.
  int bind(const std::string& host, int port);
  // Serves until stop(). Requires bind().
  void serve();
  // serve() on a background thread; returns once the server accepts.
  void start();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace bpeq
