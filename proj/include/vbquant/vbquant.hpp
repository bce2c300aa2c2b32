#pragma once

#include "vbquant/error.hpp"
#include "vbquant/spectra.hpp"
#include "vbquant/spectra_io.hpp"
#include "vbquant/peak_model.hpp"
#include "vbquant/lsq.hpp"
#include "vbquant/peakfit.hpp"
#include "vbquant/defect_model.hpp"
#include "vbquant/calibration.hpp"
#include "vbquant/calibration_io.hpp"
#include "vbquant/report_io.hpp"
#include "vbquant/polarization.hpp"
#include "vbquant/random.hpp"
#include "vbquant/synth.hpp"
