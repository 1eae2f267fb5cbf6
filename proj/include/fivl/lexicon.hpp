#pragma once

// Built-in English lexicon backing the default word-type tagger. Covers the
// vocabulary typical of visual instruction data: objects, scenes, people,
// colors, spatial words and common actions.

#include <string_view>

namespace fivl::lexicon {

inline constexpr std::string_view kNouns = R"(
man woman men women person people child children kid kids boy girl baby toddler adult
player players lady gentleman guy crowd family couple friend friends teenager student
teacher worker chef cook doctor nurse police officer soldier farmer rider driver pilot
skier surfer skateboarder snowboarder swimmer runner batter pitcher catcher umpire
referee fan audience team group passenger pedestrian customer vendor waiter waitress
tourist spectator athlete coach musician artist bride groom mother father sister brother
son daughter grandmother grandfather parent owner shepherd
head face hair eye eyes ear nose mouth lip teeth tooth tongue neck shoulder arm elbow
hand finger thumb wrist leg knee foot feet toe back chest belly stomach skin beard
mustache body hip waist
dog puppy cat kitten horse pony cow calf bull sheep lamb goat pig bird duck goose swan
chicken rooster owl eagle hawk pigeon seagull parrot penguin flamingo giraffe zebra
elephant lion tiger bear cub deer moose elk fox wolf rabbit squirrel mouse rat monkey
gorilla kangaroo camel donkey mule fish shark whale dolphin turtle frog snake lizard
butterfly bee insect spider animal animals pet herd flock
car truck bus van taxi cab motorcycle motorbike bike bicycle scooter train tram subway
locomotive railroad airplane plane jet aircraft helicopter boat ship sailboat canoe kayak
yacht ferry vehicle wagon cart trailer tractor ambulance firetruck limousine jeep suv
wheel tire engine windshield headlight bumper seat saddle helmet sail mast anchor
road street highway lane sidewalk crosswalk intersection path trail bridge tunnel track
tracks rail railway station platform parking lot garage driveway curb traffic sign signs
light lights pole post fence gate wall walls building buildings house home apartment
tower skyscraper church temple castle barn shed hut tent cabin store shop market
restaurant cafe bakery hotel hospital school library museum office factory warehouse
stadium field court pitch arena park playground zoo farm garden yard lawn backyard porch
balcony roof chimney window windows door doors doorway stairs staircase step steps
hallway corridor room bedroom bathroom kitchen living dining basement attic closet
floor ceiling corner
city town village downtown neighborhood area space place spot scene background
foreground landscape view horizon skyline
sky cloud clouds sun moon star stars rain snow ice fog mist storm wind weather sunset
sunrise shadow shadows shade sunlight daylight night day morning evening
tree trees bush bushes shrub grass plant plants flower flowers leaf leaves branch
branches trunk log logs root forest woods jungle meadow hill hills mountain mountains
valley cliff rock rocks stone stones boulder sand beach shore coast ocean sea lake river
stream pond waterfall water wave waves island desert dirt mud ground soil snowfield
slope ski skis pole poles snowboard surfboard skateboard board kite frisbee ball
football soccer baseball basketball tennis golf volleyball bat racket racquet glove mitt
net goal hoop base uniform jersey
table tables desk chair chairs couch sofa bench stool bed pillow blanket sheet mattress
shelf shelves cabinet cupboard drawer dresser wardrobe mirror lamp rug carpet curtain
curtains blinds frame picture painting poster clock vase pot pan plate plates bowl cup
mug glass glasses bottle jar can fork knife spoon spatula chopsticks napkin tray basket
box bag backpack suitcase luggage purse wallet umbrella towel soap toothbrush toothpaste
toilet sink bathtub tub shower faucet counter countertop countertops stove oven
microwave refrigerator fridge freezer dishwasher toaster blender kettle appliance
appliances fixture fixtures organizer organizers storage container trash bin
television tv screen monitor computer laptop keyboard mouse phone cellphone smartphone
tablet camera remote controller speaker headphones cable wire charger printer
book books magazine newspaper paper notebook pen pencil letter card map menu ticket
sign banner flag label logo text number numbers word words
shirt tshirt jacket coat sweater hoodie vest dress skirt pants jeans shorts suit tie
scarf hat cap hood beanie sock socks shoe shoes boot boots sneaker sneakers sandal
sandals glove gloves belt bracelet necklace ring earring watch sunglasses goggles
costume outfit apron mask wetsuit
food meal breakfast lunch dinner snack pizza sandwich burger hamburger hotdog sausage
bread toast bun bagel donut doughnut cake cupcake pie cookie cookies dessert icecream
cream cheese butter egg eggs bacon ham meat beef steak chicken pork fish rice pasta
noodles soup salad vegetable vegetables fruit fruits apple apples banana bananas orange
oranges lemon lime grape grapes strawberry strawberries cherry cherries peach pear
pineapple watermelon melon tomato tomatoes potato potatoes carrot carrots broccoli
lettuce onion onions pepper peppers corn mushroom mushrooms bean beans olive olives
coffee tea juice milk wine beer drink drinks water soda sauce ketchup sugar chocolate
candy
toy toys doll teddy puzzle game
fire flame smoke candle candles fireplace
color colors shape shapes size pattern stripe stripes spot spots dot dots line lines
edge side top bottom front middle center left right surface piece part pieces parts
object objects item items thing things
pressure game activity event party wedding ceremony race match competition concert
show performance trick jump
time hour minute year years age
kind type sort style
)";

inline constexpr std::string_view kAdjectives = R"(
red orange yellow green blue purple pink brown black white gray grey silver gold golden
beige tan dark light bright pale colorful colored multicolored striped spotted plaid
checkered
big large huge giant enormous massive small little tiny short tall long wide narrow thin
thick fat skinny slim high low deep shallow heavy
round square rectangular circular triangular oval flat curved straight
old new young ancient modern vintage antique fresh ripe rotten clean dirty messy tidy
neat empty full crowded busy quiet calm noisy loud
wooden metal metallic plastic glass leather wet dry snowy sunny cloudy rainy foggy
windy icy muddy sandy grassy rocky hot cold warm cool frozen
open closed broken shiny smooth rough soft hard sharp dull fluffy furry hairy bald
cute pretty beautiful ugly happy sad angry tired hungry scared smiling funny serious
friendly playful wild domestic
good bad great nice fine excellent poor perfect simple complex unique various several
different same similar other many few
male female elderly adult
outdoor indoor urban rural natural artificial electric digital
sliced cooked grilled fried baked raw
packed limited available compact multifunctional uneven mental visual
tight tightly
)";

inline constexpr std::string_view kAdpositions = R"(
in on at of to from with without by for about above below under underneath beneath over
near beside besides between among behind before after during inside outside into onto
upon through throughout across along around against toward towards past within off via
next like unlike despite until till since amid atop
)";

inline constexpr std::string_view kVerbs = R"(
be is are was were been being am have has had do does did
walk run jog sit stand lie lay sleep eat drink cook bake cut slice hold carry throw catch
hit kick swing serve play ride drive fly sail surf ski skate swim dive jump climb fall
look watch see stare read write draw paint talk speak sing dance laugh smile cry wave
point reach pull push lift pick put place hang wear dress brush wash clean wipe fix
build open close use make take give get bring feed pet hug kiss shake hand pour fill
mix stir chop grill fry serve wait park stop turn cross lean rest relax pose graze
move moving fill grow cover sit wait follow chase lead hunt fetch bite bark
organize optimize install utilize opt choose declutter assess remove keep maximize
create include contain show display appear seem look
splash splashing
)";

// Determiners, pronouns, conjunctions, common adverbs and number words all
// land in the residual bucket.
inline constexpr std::string_view kOther = R"(
a an the this that these those some any each every no all both either neither
i me my mine you your yours he him his she her hers it its we us our ours they them
their theirs who whom whose which what where when why how there here
and or but nor so yet if then than because while although though
not very too also just only quite really almost still already even much more most less
least again always never often sometimes usually together apart away up down out
one two three four five six seven eight nine ten eleven twelve twenty hundred thousand
first second third last
yes no
)";

}  // namespace fivl::lexicon
