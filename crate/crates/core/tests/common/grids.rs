// Survival values computed with mpmath at 50 significant digits.

/// `(x, P(chi2_1 > x))`
pub const CHI2_1_SF: [(f64, f64); 50] = [
    (0.0, 1.0),
    (1e-06, 9.9920211557217787485e-1),
    (0.01, 9.2034432544594203624e-1),
    (0.05, 8.2306327375812147128e-1),
    (0.1, 7.5182963404584927583e-1),
    (0.2, 6.5472084601857702044e-1),
    (0.3, 5.8388242077036517865e-1),
    (0.5, 4.7950012218695346232e-1),
    (0.75, 3.8647623077123266493e-1),
    (1.0, 3.1731050786291410283e-1),
    (1.25, 2.6355247728297273037e-1),
    (1.5, 2.206713619198467926e-1),
    (2.0, 1.5729920705028513066e-1),
    (2.5, 1.1384629800665805028e-1),
    (2.706, 9.9971378125259318479e-2),
    (3.0, 8.3264516663550401855e-2),
    (3.5, 6.136882913940217302e-2),
    (3.841, 5.0013683763956699076e-2),
    (4.0, 4.5500263896358414401e-2),
    (4.083333333333333, 4.3308142810791979597e-2),
    (4.5, 3.3894853524689272933e-2),
    (5.0, 2.5347318677468263932e-2),
    (5.5, 1.9016473672300543764e-2),
    (6.0, 1.4305878435429639526e-2),
    (6.635, 9.9994195740425249697e-3),
    (7.0, 8.150971593502700313e-3),
    (7.5, 6.1698993205441622136e-3),
    (8.0, 4.6777349810472658379e-3),
    (9.0, 2.6997960632601890533e-3),
    (10.0, 1.5654022580025496775e-3),
    (10.828, 9.9976571958309236492e-4),
    (11.0, 9.1111887715371288704e-4),
    (12.0, 5.3200550513924969929e-4),
    (13.0, 3.1149097676738388429e-4),
    (14.0, 1.8281063298183503176e-4),
    (15.0, 1.0751117672950056338e-4),
    (16.0, 6.3342483666239842508e-5),
    (18.0, 2.2090496998585441373e-5),
    (20.0, 7.7442164310440836377e-6),
    (22.0, 2.7265046561554973269e-6),
    (25.0, 5.7330314375838782335e-7),
    (28.0, 1.2131545083660727929e-7),
    (30.0, 4.3204630578274972948e-8),
    (33.0, 9.2158872012562295556e-9),
    (36.0, 1.9731752900753962814e-9),
    (40.0, 2.5396285894708649707e-10),
    (45.0, 1.9703444711799163082e-11),
    (50.0, 1.5374597944280348502e-12),
    (60.0, 9.4857375710738483885e-15),
    (80.0, 3.7440973842028987636e-19),
];

/// `(t, df, P(T > t))`
pub const STUDENT_T_SF: [(f64, f64, f64); 50] = [
    (0.0, 1.0, 5.0e-1),
    (3.0, 2.0, 4.773298313335456603e-2),
    (-0.5, 3.0, 6.7427601757592450278e-1),
    (0.1, 4.0, 4.6257792046972664073e-1),
    (3.4641, 5.0, 8.9814579043435877752e-3),
    (-1.2, 7.0, 8.6541403158639676911e-1),
    (0.5, 10.0, 3.1394680287148647135e-1),
    (4.0, 20.0, 3.5176164656415914474e-4),
    (-2.2, 30.0, 9.8217578000158211204e-1),
    (1.0, 60.0, 1.6066325164662307425e-1),
    (5.0, 100.0, 1.2250867067519002115e-6),
    (-3.3, 499.0, 9.9948200163548421642e-1),
    (1.5, 1.0, 1.8716704181099881619e-1),
    (6.0, 2.0, 1.3335736607712385507e-2),
    (-13.13, 3.0, 9.9952285411222029246e-1),
    (2.0, 4.0, 5.8058261758407797249e-2),
    (8.0, 5.0, 2.4645333028622204224e-4),
    (25.0, 7.0, 2.0898485588297168142e-8),
    (2.5, 10.0, 1.5723422118304402125e-2),
    (10.0, 20.0, 1.5818908793571940812e-9),
    (0.0, 30.0, 5.0e-1),
    (3.0, 60.0, 1.9638486664863094351e-3),
    (-0.5, 100.0, 6.9091321708455671401e-1),
    (0.1, 499.0, 4.6019224392067190304e-1),
    (3.4641, 1.0, 8.9456227058305421611e-2),
    (-1.2, 2.0, 8.2349831961031524022e-1),
    (0.5, 3.0, 3.2572398242407549722e-1),
    (4.0, 4.0, 8.06504495004626679e-3),
    (-2.2, 5.0, 9.604530510484088261e-1),
    (1.0, 7.0, 1.7530833141010376328e-1),
    (5.0, 10.0, 2.6866680137822630854e-4),
    (-3.3, 20.0, 9.9821180864015187682e-1),
    (1.5, 30.0, 7.2032964564323000651e-2),
    (6.0, 60.0, 6.1434230537825526856e-8),
    (-13.13, 100.0, 1.0),
    (2.0, 499.0, 2.3020883393927971919e-2),
    (8.0, 1.0, 3.9583424160565542011e-2),
    (25.0, 2.0, 7.9808510570516692827e-4),
    (2.5, 3.0, 4.3853323504032773625e-2),
    (10.0, 4.0, 2.8100181135799557786e-4),
    (0.0, 5.0, 5.0e-1),
    (3.0, 7.0, 9.971063065996268961e-3),
    (-0.5, 10.0, 6.8605319712851352865e-1),
    (0.1, 20.0, 4.6066997067280696711e-1),
    (3.4641, 30.0, 8.1212537265346988666e-4),
    (-1.2, 60.0, 8.8257190159909948451e-1),
    (0.5, 100.0, 3.0908678291544328599e-1),
    (4.0, 499.0, 3.6468111142950940568e-5),
    (-2.2, 1.0, 8.6420025121990814473e-1),
    (1.0, 2.0, 2.1132486540518711775e-1),
];
