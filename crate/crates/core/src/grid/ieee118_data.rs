//! Embedded IEEE 118-bus network data used by the NREL-118-shaped builder.
//!
//! Parallel circuits of the original case are merged into single equivalent
//! branches, which leaves 179 unique bus pairs.

/// IEEE 118-bus data: (base_kv, pd_mw, qd_mvar) per bus, 0-based order.
pub(crate) const BUSES: [(f64, f64, f64); 118] = [
    (138.0, 51.0, 27.0),
    (138.0, 20.0, 9.0),
    (138.0, 39.0, 10.0),
    (138.0, 39.0, 12.0),
    (138.0, 0.0, 0.0),
    (138.0, 52.0, 22.0),
    (138.0, 19.0, 2.0),
    (345.0, 28.0, 0.0),
    (345.0, 0.0, 0.0),
    (345.0, 0.0, 0.0),
    (138.0, 70.0, 23.0),
    (138.0, 47.0, 10.0),
    (138.0, 34.0, 16.0),
    (138.0, 14.0, 1.0),
    (138.0, 90.0, 30.0),
    (138.0, 25.0, 10.0),
    (138.0, 11.0, 3.0),
    (138.0, 60.0, 34.0),
    (138.0, 45.0, 25.0),
    (138.0, 18.0, 3.0),
    (138.0, 14.0, 8.0),
    (138.0, 10.0, 5.0),
    (138.0, 7.0, 3.0),
    (138.0, 13.0, 0.0),
    (138.0, 0.0, 0.0),
    (345.0, 0.0, 0.0),
    (138.0, 71.0, 13.0),
    (138.0, 17.0, 7.0),
    (138.0, 24.0, 4.0),
    (345.0, 0.0, 0.0),
    (138.0, 43.0, 27.0),
    (138.0, 59.0, 23.0),
    (138.0, 23.0, 9.0),
    (138.0, 59.0, 26.0),
    (138.0, 33.0, 9.0),
    (138.0, 31.0, 17.0),
    (138.0, 0.0, 0.0),
    (345.0, 0.0, 0.0),
    (138.0, 27.0, 11.0),
    (138.0, 66.0, 23.0),
    (138.0, 37.0, 10.0),
    (138.0, 96.0, 23.0),
    (138.0, 18.0, 7.0),
    (138.0, 16.0, 8.0),
    (138.0, 53.0, 22.0),
    (138.0, 28.0, 10.0),
    (138.0, 34.0, 0.0),
    (138.0, 20.0, 11.0),
    (138.0, 87.0, 30.0),
    (138.0, 17.0, 4.0),
    (138.0, 17.0, 8.0),
    (138.0, 18.0, 5.0),
    (138.0, 23.0, 11.0),
    (138.0, 113.0, 32.0),
    (138.0, 63.0, 22.0),
    (138.0, 84.0, 18.0),
    (138.0, 12.0, 3.0),
    (138.0, 12.0, 3.0),
    (138.0, 277.0, 113.0),
    (138.0, 78.0, 3.0),
    (138.0, 0.0, 0.0),
    (138.0, 77.0, 14.0),
    (345.0, 0.0, 0.0),
    (345.0, 0.0, 0.0),
    (345.0, 0.0, 0.0),
    (138.0, 39.0, 18.0),
    (138.0, 28.0, 7.0),
    (345.0, 0.0, 0.0),
    (138.0, 0.0, 0.0),
    (138.0, 66.0, 20.0),
    (138.0, 0.0, 0.0),
    (138.0, 12.0, 0.0),
    (138.0, 6.0, 0.0),
    (138.0, 68.0, 27.0),
    (138.0, 47.0, 11.0),
    (138.0, 68.0, 36.0),
    (138.0, 61.0, 28.0),
    (138.0, 71.0, 26.0),
    (138.0, 39.0, 32.0),
    (138.0, 130.0, 26.0),
    (345.0, 0.0, 0.0),
    (138.0, 54.0, 27.0),
    (138.0, 20.0, 10.0),
    (138.0, 11.0, 7.0),
    (138.0, 24.0, 15.0),
    (138.0, 21.0, 10.0),
    (161.0, 0.0, 0.0),
    (138.0, 48.0, 10.0),
    (138.0, 0.0, 0.0),
    (138.0, 163.0, 42.0),
    (138.0, 10.0, 0.0),
    (138.0, 65.0, 10.0),
    (138.0, 12.0, 7.0),
    (138.0, 30.0, 16.0),
    (138.0, 42.0, 31.0),
    (138.0, 38.0, 15.0),
    (138.0, 15.0, 9.0),
    (138.0, 34.0, 8.0),
    (138.0, 42.0, 0.0),
    (138.0, 37.0, 18.0),
    (138.0, 22.0, 15.0),
    (138.0, 5.0, 3.0),
    (138.0, 23.0, 16.0),
    (138.0, 38.0, 25.0),
    (138.0, 31.0, 26.0),
    (138.0, 43.0, 16.0),
    (138.0, 50.0, 12.0),
    (138.0, 2.0, 1.0),
    (138.0, 8.0, 3.0),
    (138.0, 39.0, 30.0),
    (138.0, 0.0, 0.0),
    (138.0, 68.0, 13.0),
    (138.0, 6.0, 0.0),
    (138.0, 8.0, 3.0),
    (138.0, 22.0, 7.0),
    (138.0, 184.0, 0.0),
    (138.0, 20.0, 8.0),
    (138.0, 33.0, 15.0),
];

/// Unique bus pairs with parallel circuits merged: (from, to, r_pu, x_pu, base_rating_mva).
/// Base ratings precede the 3.5x capacity scaling.
pub(crate) const BRANCHES: [(usize, usize, f64, f64, f64); 179] = [
    (0, 1, 0.030300, 0.099900, 20.0),
    (0, 2, 0.012900, 0.042400, 60.0),
    (3, 4, 0.001760, 0.007980, 160.0),
    (2, 4, 0.024100, 0.108000, 110.0),
    (4, 5, 0.011900, 0.054000, 140.0),
    (5, 6, 0.004590, 0.020800, 60.0),
    (7, 8, 0.002440, 0.030500, 680.0),
    (7, 4, 0.000000, 0.026700, 510.0),
    (8, 9, 0.002580, 0.032200, 680.0),
    (3, 10, 0.020900, 0.068800, 100.0),
    (4, 10, 0.020300, 0.068200, 120.0),
    (10, 11, 0.005950, 0.019600, 60.0),
    (1, 11, 0.018700, 0.061600, 50.0),
    (2, 11, 0.048400, 0.160000, 20.0),
    (6, 11, 0.008620, 0.034000, 30.0),
    (10, 12, 0.022250, 0.073100, 60.0),
    (11, 13, 0.021500, 0.070700, 40.0),
    (12, 14, 0.074400, 0.244400, 20.0),
    (13, 14, 0.059500, 0.195000, 20.0),
    (11, 15, 0.021200, 0.083400, 20.0),
    (14, 16, 0.013200, 0.043700, 160.0),
    (15, 16, 0.045400, 0.180100, 30.0),
    (16, 17, 0.012300, 0.050500, 130.0),
    (17, 18, 0.011190, 0.049300, 40.0),
    (18, 19, 0.025200, 0.117000, 20.0),
    (14, 18, 0.012000, 0.039400, 30.0),
    (19, 20, 0.018300, 0.084900, 50.0),
    (20, 21, 0.020900, 0.097000, 70.0),
    (21, 22, 0.034200, 0.159000, 80.0),
    (22, 23, 0.013500, 0.049200, 40.0),
    (22, 24, 0.015600, 0.080000, 260.0),
    (25, 24, 0.000000, 0.038200, 140.0),
    (24, 26, 0.031800, 0.163000, 210.0),
    (26, 27, 0.019130, 0.085500, 50.0),
    (27, 28, 0.023700, 0.094300, 30.0),
    (29, 16, 0.000000, 0.038800, 350.0),
    (7, 29, 0.004310, 0.050400, 130.0),
    (25, 29, 0.007990, 0.086000, 340.0),
    (16, 30, 0.047400, 0.156300, 20.0),
    (28, 30, 0.010800, 0.033100, 20.0),
    (22, 31, 0.031700, 0.115300, 140.0),
    (30, 31, 0.029800, 0.098500, 50.0),
    (26, 31, 0.022900, 0.075500, 30.0),
    (14, 32, 0.038000, 0.124400, 20.0),
    (18, 33, 0.075200, 0.247000, 20.0),
    (34, 35, 0.002240, 0.010200, 20.0),
    (34, 36, 0.011000, 0.049700, 60.0),
    (32, 36, 0.041500, 0.142000, 20.0),
    (33, 35, 0.008710, 0.026800, 50.0),
    (33, 36, 0.002560, 0.009400, 140.0),
    (37, 36, 0.000000, 0.037500, 370.0),
    (36, 38, 0.032100, 0.106000, 90.0),
    (36, 39, 0.059300, 0.168000, 70.0),
    (29, 37, 0.004640, 0.054000, 120.0),
    (38, 39, 0.018400, 0.060500, 50.0),
    (39, 40, 0.014500, 0.048700, 30.0),
    (39, 41, 0.055500, 0.183000, 20.0),
    (40, 41, 0.041000, 0.135000, 30.0),
    (42, 43, 0.060800, 0.245400, 30.0),
    (33, 42, 0.041300, 0.168100, 20.0),
    (43, 44, 0.022400, 0.090100, 50.0),
    (44, 45, 0.040000, 0.135600, 60.0),
    (45, 46, 0.038000, 0.127000, 50.0),
    (45, 47, 0.060100, 0.189000, 30.0),
    (46, 48, 0.019100, 0.062500, 30.0),
    (41, 48, 0.035750, 0.161500, 190.0),
    (44, 48, 0.068400, 0.186000, 80.0),
    (47, 48, 0.017900, 0.050500, 60.0),
    (48, 49, 0.026700, 0.075200, 80.0),
    (48, 50, 0.048600, 0.137000, 100.0),
    (50, 51, 0.020300, 0.058800, 50.0),
    (51, 52, 0.040500, 0.163500, 20.0),
    (52, 53, 0.026300, 0.122000, 20.0),
    (48, 53, 0.039932, 0.145070, 110.0),
    (53, 54, 0.016900, 0.070700, 20.0),
    (53, 55, 0.002750, 0.009550, 30.0),
    (54, 55, 0.004880, 0.015100, 40.0),
    (55, 56, 0.034300, 0.096600, 40.0),
    (49, 56, 0.047400, 0.134000, 60.0),
    (55, 57, 0.034300, 0.096600, 20.0),
    (50, 57, 0.025500, 0.071900, 30.0),
    (53, 58, 0.050300, 0.229300, 50.0),
    (55, 58, 0.040697, 0.122428, 90.0),
    (54, 58, 0.047390, 0.215800, 60.0),
    (58, 59, 0.031700, 0.145000, 70.0),
    (58, 60, 0.032800, 0.150000, 80.0),
    (59, 60, 0.002640, 0.013500, 170.0),
    (59, 61, 0.012300, 0.056100, 20.0),
    (60, 61, 0.008240, 0.037600, 50.0),
    (62, 58, 0.000000, 0.038600, 230.0),
    (62, 63, 0.001720, 0.020000, 230.0),
    (63, 60, 0.000000, 0.026800, 50.0),
    (37, 64, 0.009010, 0.098600, 250.0),
    (63, 64, 0.002690, 0.030200, 280.0),
    (48, 65, 0.009000, 0.045950, 380.0),
    (61, 65, 0.048200, 0.218000, 60.0),
    (61, 66, 0.025800, 0.117000, 40.0),
    (64, 65, 0.000000, 0.037000, 30.0),
    (65, 66, 0.022400, 0.101500, 80.0),
    (64, 67, 0.001380, 0.016000, 100.0),
    (46, 68, 0.084400, 0.277800, 80.0),
    (48, 68, 0.098500, 0.324000, 60.0),
    (67, 68, 0.000000, 0.037000, 100.0),
    (68, 69, 0.030000, 0.127000, 140.0),
    (23, 69, 0.002210, 0.411500, 20.0),
    (69, 70, 0.008820, 0.035500, 20.0),
    (23, 71, 0.048800, 0.196000, 20.0),
    (70, 71, 0.044600, 0.180000, 20.0),
    (70, 72, 0.008660, 0.045400, 20.0),
    (69, 73, 0.040100, 0.132300, 30.0),
    (69, 74, 0.042800, 0.141000, 20.0),
    (68, 74, 0.040500, 0.122000, 150.0),
    (73, 74, 0.012300, 0.040600, 80.0),
    (75, 76, 0.044400, 0.148000, 100.0),
    (68, 76, 0.030900, 0.101000, 70.0),
    (74, 76, 0.060100, 0.199900, 60.0),
    (76, 77, 0.003760, 0.012400, 70.0),
    (77, 78, 0.005460, 0.024400, 50.0),
    (76, 79, 0.010880, 0.033209, 230.0),
    (78, 79, 0.015600, 0.070400, 110.0),
    (67, 80, 0.001750, 0.020200, 90.0),
    (80, 79, 0.000000, 0.037000, 90.0),
    (76, 81, 0.029800, 0.085300, 30.0),
    (81, 82, 0.011200, 0.036650, 90.0),
    (82, 83, 0.062500, 0.132000, 50.0),
    (82, 84, 0.043000, 0.148000, 70.0),
    (83, 84, 0.030200, 0.064100, 70.0),
    (84, 85, 0.035000, 0.123000, 30.0),
    (85, 86, 0.028280, 0.207400, 20.0),
    (84, 87, 0.020000, 0.102000, 90.0),
    (84, 88, 0.023900, 0.173000, 120.0),
    (87, 88, 0.013900, 0.071200, 160.0),
    (88, 89, 0.016379, 0.065169, 250.0),
    (89, 90, 0.025400, 0.083600, 20.0),
    (88, 91, 0.007986, 0.038293, 400.0),
    (90, 91, 0.038700, 0.127200, 20.0),
    (91, 92, 0.025800, 0.084800, 100.0),
    (91, 93, 0.048100, 0.158000, 90.0),
    (92, 93, 0.022300, 0.073200, 80.0),
    (93, 94, 0.013200, 0.043400, 70.0),
    (79, 95, 0.035600, 0.182000, 30.0),
    (81, 95, 0.016200, 0.053000, 30.0),
    (93, 95, 0.026900, 0.086900, 40.0),
    (79, 96, 0.018300, 0.093400, 40.0),
    (79, 97, 0.023800, 0.108000, 40.0),
    (79, 98, 0.045400, 0.206000, 30.0),
    (91, 99, 0.064800, 0.295000, 50.0),
    (93, 99, 0.017800, 0.058000, 20.0),
    (94, 95, 0.017100, 0.054700, 20.0),
    (95, 96, 0.017300, 0.088500, 20.0),
    (97, 99, 0.039700, 0.179000, 20.0),
    (98, 99, 0.018000, 0.081300, 50.0),
    (99, 100, 0.027700, 0.126200, 30.0),
    (91, 101, 0.012300, 0.055900, 70.0),
    (100, 101, 0.024600, 0.112000, 60.0),
    (99, 102, 0.016000, 0.052500, 180.0),
    (99, 103, 0.045100, 0.204000, 90.0),
    (102, 103, 0.046600, 0.158400, 50.0),
    (102, 104, 0.053500, 0.162500, 70.0),
    (99, 105, 0.060500, 0.229000, 90.0),
    (103, 104, 0.009940, 0.037800, 80.0),
    (104, 105, 0.014000, 0.054700, 20.0),
    (104, 106, 0.053000, 0.183000, 40.0),
    (104, 107, 0.026100, 0.070300, 40.0),
    (105, 106, 0.053000, 0.183000, 40.0),
    (107, 108, 0.010500, 0.028800, 40.0),
    (102, 109, 0.039060, 0.181300, 90.0),
    (108, 109, 0.027800, 0.076200, 30.0),
    (109, 110, 0.022000, 0.075500, 60.0),
    (109, 111, 0.024700, 0.064000, 110.0),
    (16, 112, 0.009130, 0.030100, 20.0),
    (31, 112, 0.061500, 0.203000, 20.0),
    (31, 113, 0.013500, 0.061200, 20.0),
    (26, 114, 0.016400, 0.074100, 40.0),
    (113, 114, 0.002300, 0.010400, 20.0),
    (67, 115, 0.000340, 0.004050, 280.0),
    (11, 116, 0.032900, 0.140000, 30.0),
    (74, 117, 0.014500, 0.048100, 60.0),
    (75, 117, 0.016400, 0.054400, 20.0),
];

/// Conventional units: (bus, p_max_mw, q_min_mvar, q_max_mvar).
pub(crate) const UNITS: [(usize, f64, f64, f64); 54] = [
    (0, 100.0, -5.0, 15.0),
    (3, 100.0, -300.0, 300.0),
    (5, 100.0, -13.0, 50.0),
    (7, 100.0, -300.0, 300.0),
    (9, 550.0, -147.0, 200.0),
    (11, 185.0, -35.0, 120.0),
    (14, 100.0, -10.0, 30.0),
    (17, 100.0, -16.0, 50.0),
    (18, 100.0, -8.0, 24.0),
    (23, 100.0, -300.0, 300.0),
    (24, 320.0, -47.0, 140.0),
    (25, 414.0, -1000.0, 1000.0),
    (26, 100.0, -300.0, 300.0),
    (30, 107.0, -300.0, 300.0),
    (31, 100.0, -14.0, 42.0),
    (33, 100.0, -8.0, 24.0),
    (35, 100.0, -8.0, 24.0),
    (39, 100.0, -300.0, 300.0),
    (41, 100.0, -300.0, 300.0),
    (45, 119.0, -100.0, 100.0),
    (48, 304.0, -85.0, 210.0),
    (53, 148.0, -300.0, 300.0),
    (54, 100.0, -8.0, 23.0),
    (55, 100.0, -8.0, 15.0),
    (58, 255.0, -60.0, 180.0),
    (60, 260.0, -100.0, 300.0),
    (61, 100.0, -20.0, 20.0),
    (64, 491.0, -67.0, 200.0),
    (65, 492.0, -67.0, 200.0),
    (68, 805.2, -300.0, 300.0),
    (69, 100.0, -10.0, 32.0),
    (71, 100.0, -100.0, 100.0),
    (72, 100.0, -100.0, 100.0),
    (73, 100.0, -6.0, 9.0),
    (75, 100.0, -8.0, 23.0),
    (76, 100.0, -20.0, 70.0),
    (79, 577.0, -165.0, 280.0),
    (84, 100.0, -8.0, 23.0),
    (86, 104.0, -100.0, 1000.0),
    (88, 707.0, -210.0, 300.0),
    (89, 100.0, -300.0, 300.0),
    (90, 100.0, -100.0, 100.0),
    (91, 100.0, -3.0, 9.0),
    (98, 100.0, -100.0, 100.0),
    (99, 352.0, -50.0, 155.0),
    (102, 140.0, -15.0, 40.0),
    (103, 100.0, -8.0, 23.0),
    (104, 100.0, -8.0, 23.0),
    (106, 100.0, -200.0, 200.0),
    (109, 100.0, -8.0, 23.0),
    (110, 136.0, -100.0, 1000.0),
    (111, 100.0, -100.0, 1000.0),
    (112, 100.0, -100.0, 200.0),
    (115, 100.0, -1000.0, 1000.0),
];
