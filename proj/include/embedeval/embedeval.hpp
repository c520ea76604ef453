#pragma once

#include "analysis.hpp"
#include "bootstrap.hpp"
#include "core.hpp"
#include "embed_client.hpp"
#include "ingest.hpp"
#include "isotropy.hpp"
#include "overlap.hpp"
#include "report.hpp"
#include "retrieval.hpp"
#include "run_report.hpp"
#include "synth.hpp"
