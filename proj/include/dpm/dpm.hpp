#pragma once

#include "dpm/cli.hpp"
#include "dpm/cohort_store.hpp"
#include "dpm/error.hpp"
#include "dpm/hmm.hpp"
#include "dpm/ingest.hpp"
#include "dpm/query.hpp"
#include "dpm/service.hpp"
#include "dpm/summarize.hpp"
