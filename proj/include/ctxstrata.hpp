#pragma once

#include "ctxstrata/calibration.hpp"
#include "ctxstrata/csv.hpp"
#include "ctxstrata/dataset.hpp"
#include "ctxstrata/error.hpp"
#include "ctxstrata/folds.hpp"
#include "ctxstrata/matchset.hpp"
#include "ctxstrata/metrics.hpp"
#include "ctxstrata/phrases.hpp"
#include "ctxstrata/random.hpp"
#include "ctxstrata/report.hpp"
#include "ctxstrata/resample.hpp"
#include "ctxstrata/stopwords.hpp"
#include "ctxstrata/stratify.hpp"
#include "ctxstrata/synthlab.hpp"
#include "ctxstrata/textrisk.hpp"
#include "ctxstrata/timestamp.hpp"
