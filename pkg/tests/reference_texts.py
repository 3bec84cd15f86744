"""Published packet texts shared across test modules.

These byte-exact documents double as parser fixtures and as calibration
targets for the lexical token rule.
"""

EPIDEMIC_CORE = """@CCL/1
TASK=code.web.canvas.epidemic_sim
OUT=1html.run.codeonly
C={libs:false,assets:false}
GRID={w:80,h:50,cell:8}
AGENT={count:350,state:[S,I,R],initial_infected:5}
RULE={move:random_walk,infection_radius:2,
      infection_prob:.08,recovery_steps:600}
UI={start_pause:true,reset:true,speed_slider:true}
FX={color:{S:blue,I:red,R:green},chart:sir_counts}
"""

EPIDEMIC_MIN = """@CCL/1m T=canvas.epidemic OUT=1html.codeonly C=libs0,assets0
G=80x50,c8 A=n350,SIR,I0=5 R=walk,rad2,p.08,rec600
UI=start+pause,reset,speed FX=Sblue,Ired,Rgreen,chartSIR
"""

TRIP_TRACE = """DEST=Lisbon
DAYS=4
TIME=early_Oct
BUDGET=moderate
PREF={walkable,local_food,bookstores,viewpoints}
PLAN={day_trip:Sintra}
C={nightlife_heavy:false,rental_car:false,far_out_lodging:false}
D={base:[Baixa,Chiado]}
OUT={day_by_day,transit_notes,rainy_alt,cost_ranges}
"""

DIFF_BEFORE = """@CCL/1
DEST=Lisbon
DAYS=4
PREF={walkable,local_food,bookstores,viewpoints}
PLAN={day_trip:Sintra}
C={rental_car:false,nightlife_heavy:false}
OUT={day_by_day,transit_notes,cost_ranges}
"""

DIFF_AFTER = """@CCL/1
DEST=Lisbon
DAYS=4
PREF={walkable,local_food,bookstores,viewpoints,fado}
PLAN={day_trip:Cascais}
C={rental_car:false,nightlife_heavy:false,far_out_lodging:false}
OUT={day_by_day,transit_notes,rainy_alt,cost_ranges}
"""

JSON_PATCH = """[
  {"op":"replace","path":"/PLAN/day_trip","value":"Cascais"},
  {"op":"add","path":"/PREF/-","value":"fado"},
  {"op":"add","path":"/C/far_out_lodging","value":false},
  {"op":"add","path":"/OUT/-","value":"rainy_alt"}
]
"""

TRIP_CORE = """@CCL/1
TASK=travel.plan
DEST=Lisbon
TIME=early_Oct
DAYS=4
BUDGET=moderate
PREF={walkable,local_food,bookstores,viewpoints}
PLAN={day_trip:Sintra}
BASE={allowed:[Baixa,Chiado],far_out_lodging:false}
C={nightlife_heavy:false,rental_car:false}
OUT={day_by_day:true,transit_notes:true,
     rainy_alt:true,cost_ranges:true}
"""

PYTHON_CORE = """@CCL/1
TASK=code.python.csv_clean
IN=customers.csv
OUT={file:cleaned.csv,answer:codeonly}
C={stdlib_only:true,pandas:false,third_party:false}
COLS=[customer_id,email,signup_date,country,revenue_usd]
DROP={missing:customer_id,invalid:email}
NORM={country:iso2_map_in_file,date:[ymd,mdy,d_mon_y]->iso,
      revenue_usd:decimal2,invalid_revenue:"0.00"}
DEDUP={key:customer_id,keep:latest_signup_date}
REPORT=[rows_read,rows_written,rows_dropped,duplicates_removed]
"""

REFERENCE_TEXTS = {
    "epidemic_ccl_core": EPIDEMIC_CORE,
    "epidemic_ccl_min": EPIDEMIC_MIN,
    "trip_ccl_trace": TRIP_TRACE,
    "diff_ccl_before": DIFF_BEFORE,
    "diff_ccl_after": DIFF_AFTER,
    "json_patch_diff": JSON_PATCH,
}
